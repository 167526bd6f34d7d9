//! Experiment protocols: in-target, cross-target, ablation and multi-seed
//! summaries, all sharing one set of instances, split and annotations.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, MetricsReport};
use super::train::{train, TrainConfig, TrainOutcome};
use super::HarnessError;
use crate::conversation::{DatasetSplit, SplitPart, StanceInstance};
use crate::kam::{Annotator, RelationAnnotations, RelationKind};
use crate::mkian::{prepare, AblationFlags, Encoder, Mkian, ModelConfig, PreparedInstance, Stream};

/// Short codes of the five specific targets.
pub const TARGET_CODES: [(&str, &str); 5] = [
    ("BC", "Bitcoin"),
    ("DT", "Donald Trump"),
    ("JB", "Joe Biden"),
    ("SX", "SpaceX"),
    ("TS", "Tesla"),
];

/// Default (source, destination) transfer pairs: four within a domain
/// (politics, companies) followed by eight across domains.
pub const CROSS_TARGET_PAIRS: [(&str, &str); 12] = [
    ("DT", "JB"),
    ("JB", "DT"),
    ("SX", "TS"),
    ("TS", "SX"),
    ("BC", "DT"),
    ("BC", "JB"),
    ("BC", "SX"),
    ("BC", "TS"),
    ("DT", "BC"),
    ("TS", "BC"),
    ("SX", "DT"),
    ("DT", "SX"),
];

pub fn target_code(name: &str) -> Option<&'static str> {
    TARGET_CODES
        .iter()
        .find(|(_, n)| n.eq_ignore_ascii_case(name))
        .map(|(c, _)| *c)
}

/// Relation kinds the enabled streams need.
pub fn needed_kinds(flags: &AblationFlags) -> Vec<RelationKind> {
    let mut kinds = Vec::new();
    if flags.use_logical {
        kinds.push(RelationKind::Logical);
    }
    if flags.use_act {
        kinds.push(RelationKind::Act);
    }
    kinds
}

/// Annotations keyed by instance id, requesting only the kinds `flags` needs.
pub fn annotate_instances(
    annotator: &Annotator<'_>,
    instances: &[StanceInstance],
    flags: &AblationFlags,
) -> Result<HashMap<String, RelationAnnotations>, HarnessError> {
    let kinds = needed_kinds(flags);
    let chains: Vec<&[crate::conversation::Utterance]> = instances.iter().map(|i| i.chain.as_slice()).collect();
    let anns = annotator.annotate_chains(&chains, &kinds)?;
    Ok(instances.iter().map(|i| i.id.clone()).zip(anns).collect())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTargetResult {
    pub source: String,
    pub dest: String,
    pub label: String,
    pub f_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub flags: AblationFlags,
    pub f_avg: f64,
    /// `f_avg - full model f_avg`
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub full_f_avg: f64,
    pub rows: Vec<AblationRow>,
}

/// The four single-layer ablations, in reporting order.
pub fn ablation_variants() -> [(&'static str, AblationFlags); 4] {
    [
        ("w/o Local", AblationFlags::without(Stream::Local)),
        ("w/o Contextual", AblationFlags::without(Stream::Contextual)),
        ("w/o LR", AblationFlags::without(Stream::Logical)),
        ("w/o CA", AblationFlags::without(Stream::Act)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl SeedSummary {
    pub fn new(seeds: Vec<u64>, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / n
        };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        SeedSummary {
            seeds,
            values,
            mean,
            std,
        }
    }
}

impl std::fmt::Display for SeedSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.std, self.values.len())
    }
}

pub struct Experiment<'a> {
    pub instances: &'a [StanceInstance],
    pub split: &'a DatasetSplit,
    /// Keyed by instance id.
    pub annotations: &'a HashMap<String, RelationAnnotations>,
    pub encoder: &'a dyn Encoder,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl<'a> Experiment<'a> {
    pub fn targets(&self) -> BTreeSet<String> {
        self.instances.iter().map(|i| i.target.name.clone()).collect()
    }

    /// Accepts a full target name or its short code, case-insensitively.
    pub fn resolve_target(&self, name: &str) -> Result<String, HarnessError> {
        let full = TARGET_CODES
            .iter()
            .find(|(c, _)| c.eq_ignore_ascii_case(name))
            .map(|(_, n)| *n)
            .unwrap_or(name);
        self.targets()
            .into_iter()
            .find(|t| t.eq_ignore_ascii_case(full))
            .ok_or_else(|| HarnessError::UnknownTarget(name.to_string()))
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder_mode: self.train.encoder_mode,
            ..self.model.clone()
        }
    }

    /// Instances of one split part, optionally restricted to one target.
    pub fn prepared(
        &self,
        part: SplitPart,
        target: Option<&str>,
        flags: &AblationFlags,
    ) -> Result<Vec<PreparedInstance>, HarnessError> {
        let config = self.model_config();
        let selected: Vec<&StanceInstance> = self
            .split
            .select(self.instances, part)
            .into_iter()
            .filter(|i| target.is_none_or(|t| i.target.name == t))
            .collect();
        let prepared: Result<Vec<PreparedInstance>, _> = selected
            .par_iter()
            .map(|inst| prepare(inst, self.annotations.get(&inst.id), &config, flags, self.encoder))
            .collect();
        Ok(prepared?)
    }

    /// Trains on `train_target`'s train/dev parts (all targets when `None`)
    /// and evaluates on `eval_target`'s test part.
    pub fn run(
        &self,
        name: &str,
        train_target: Option<&str>,
        eval_target: Option<&str>,
        flags: AblationFlags,
        seed: u64,
    ) -> Result<RunResult, HarnessError> {
        let train_set = self.prepared(SplitPart::Train, train_target, &flags)?;
        let dev_set = self.prepared(SplitPart::Dev, train_target, &flags)?;
        let test_set = self.prepared(SplitPart::Test, eval_target, &flags)?;
        let model = Mkian::new(self.model_config(), flags, self.encoder, seed)?;
        let tc = TrainConfig {
            seed,
            flags,
            ..self.train.clone()
        };
        let outcome = train(model, &train_set, &dev_set, &tc)?;
        let report = evaluate(&outcome.model, &test_set, name);
        Ok(RunResult {
            name: name.to_string(),
            outcome,
            report,
        })
    }

    /// One model per call; `None` pools every target.
    pub fn run_in_target(&self, target: Option<&str>) -> Result<RunResult, HarnessError> {
        let t = target.map(|t| self.resolve_target(t)).transpose()?;
        let name = t.clone().unwrap_or_else(|| "all".to_string());
        self.run(&name, t.as_deref(), t.as_deref(), self.train.flags, self.train.seed)
    }

    pub fn run_cross_target(&self, source: &str, dest: &str) -> Result<CrossTargetResult, HarnessError> {
        let s = self.resolve_target(source)?;
        let d = self.resolve_target(dest)?;
        let label = format!(
            "{}→{}",
            target_code(&s).unwrap_or(s.as_str()),
            target_code(&d).unwrap_or(d.as_str())
        );
        let r = self.run(&label, Some(&s), Some(&d), self.train.flags, self.train.seed)?;
        Ok(CrossTargetResult {
            source: s,
            dest: d,
            label,
            f_avg: r.report.pooled_f_avg,
        })
    }

    /// Runs the pairs in order; fails on the first unknown target.
    pub fn run_cross_targets(&self, pairs: &[(&str, &str)]) -> Result<Vec<CrossTargetResult>, HarnessError> {
        pairs.iter().map(|(s, d)| self.run_cross_target(s, d)).collect()
    }

    /// Full model plus the four ablations under the same seeds and data.
    /// Scores are macro F_avg means over `seeds`.
    pub fn run_ablation(&self, seeds: &[u64]) -> Result<AblationTable, HarnessError> {
        let score = |flags: AblationFlags| -> Result<f64, HarnessError> {
            let mut total = 0.0;
            for &seed in seeds {
                total += self.run("ablation", None, None, flags, seed)?.report.macro_f_avg;
            }
            Ok(total / seeds.len().max(1) as f64)
        };
        let full = score(AblationFlags::ALL_ON)?;
        let mut rows = Vec::new();
        for (variant, flags) in ablation_variants() {
            let f = score(flags)?;
            rows.push(AblationRow {
                variant: variant.to_string(),
                flags,
                f_avg: f,
                delta: f - full,
            });
        }
        Ok(AblationTable { full_f_avg: full, rows })
    }

    /// Pooled-target training repeated per seed; summarizes macro F_avg.
    pub fn run_seeds(&self, seeds: &[u64]) -> Result<(Vec<RunResult>, SeedSummary), HarnessError> {
        let mut runs = Vec::new();
        for &seed in seeds {
            runs.push(self.run(&format!("seed-{seed}"), None, None, self.train.flags, seed)?);
        }
        let values = runs.iter().map(|r| r.report.macro_f_avg).collect();
        Ok((runs, SeedSummary::new(seeds.to_vec(), values)))
    }
}
