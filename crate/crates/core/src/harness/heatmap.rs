//! Empirical conditional distributions between relation labels and stance.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::conversation::StanceInstance;
use crate::kam::RelationAnnotations;

/// Row-normalized co-occurrence table. Only observed rows are kept, so every
/// row sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub given: String,
    pub of: String,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub probs: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ConditionalTable {
    fn from_pairs(given: &str, of: &str, pairs: &[(String, String)]) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (row, col) in pairs {
            *counts.entry(row.clone()).or_default().entry(col.clone()).or_default() += 1;
        }
        let probs = counts
            .iter()
            .map(|(row, cols)| {
                let total: usize = cols.values().sum();
                let dist = cols
                    .iter()
                    .map(|(c, &k)| (c.clone(), k as f64 / total as f64))
                    .collect();
                (row.clone(), dist)
            })
            .collect();
        ConditionalTable {
            given: given.to_string(),
            of: of.to_string(),
            counts,
            probs,
        }
    }

    /// `P(of = col | given = row)`, 0 when unobserved.
    pub fn prob(&self, row: &str, col: &str) -> f64 {
        self.probs.get(row).and_then(|r| r.get(col)).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationStanceTables {
    pub logical_given_stance: ConditionalTable,
    pub act_given_stance: ConditionalTable,
    pub act_given_logical: ConditionalTable,
}

/// Pairs each instance's stance with the relations between its utterance and
/// the parent. Root posts have no parent and are skipped, as are instances
/// without annotations.
pub fn relation_stance_heatmap(
    instances: &[StanceInstance],
    annotations: &HashMap<String, RelationAnnotations>,
) -> RelationStanceTables {
    let mut lr_st = Vec::new();
    let mut ca_st = Vec::new();
    let mut ca_lr = Vec::new();
    for inst in instances {
        let Some(pair) = annotations.get(&inst.id).and_then(|a| a.pairs.last()) else {
            continue;
        };
        let stance = inst.gold.as_str().to_string();
        if let Some(lr) = pair.logical {
            lr_st.push((stance.clone(), lr.as_str().to_string()));
        }
        if let Some(ca) = pair.act {
            ca_st.push((stance.clone(), ca.as_str().to_string()));
        }
        if let (Some(lr), Some(ca)) = (pair.logical, pair.act) {
            ca_lr.push((lr.as_str().to_string(), ca.as_str().to_string()));
        }
    }
    RelationStanceTables {
        logical_given_stance: ConditionalTable::from_pairs("stance", "logical relation", &lr_st),
        act_given_stance: ConditionalTable::from_pairs("stance", "conversation act", &ca_st),
        act_given_logical: ConditionalTable::from_pairs("logical relation", "conversation act", &ca_lr),
    }
}
