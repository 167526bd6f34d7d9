use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use super::train::predict;
use super::HarnessError;
use crate::conversation::{bucket_labels, depth_bucket, Stance, TargetKind};
use crate::mkian::{AblationFlags, Encoder, Mkian, PreparedInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    pub target: String,
    pub count: usize,
    pub f_favor: f64,
    pub f_against: f64,
    pub f_avg: f64,
}

impl TargetScores {
    fn from_confusion(target: &str, cm: &ConfusionMatrix) -> Self {
        let f_favor = cm.f1(Stance::Favor);
        let f_against = cm.f1(Stance::Against);
        TargetScores {
            target: target.to_string(),
            count: cm.total(),
            f_favor,
            f_against,
            f_avg: (f_favor + f_against) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub encoder_identity: String,
    pub flags: AblationFlags,
}

impl RunMetadata {
    pub fn for_model(name: &str, model: &Mkian) -> Self {
        RunMetadata {
            name: name.to_string(),
            seed: model.seed,
            config_hash: model.config.fingerprint(&model.encoder_identity),
            encoder_identity: model.encoder_identity.clone(),
            flags: model.flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_target: Vec<TargetScores>,
    /// Unweighted mean of the per-target F_avg.
    pub macro_f_avg: f64,
    /// F_avg over all instances pooled.
    pub pooled_f_avg: f64,
    pub accuracy: f64,
    /// Instances per depth bucket, zero-count buckets included.
    pub bucket_counts: BTreeMap<String, usize>,
    /// F_avg per non-empty depth bucket.
    pub bucket_f_avg: BTreeMap<String, f64>,
    pub bucket_confusion: BTreeMap<String, ConfusionMatrix>,
    /// Instances whose depth falls outside the bucket table.
    pub unbucketed: usize,
    pub confusion: ConfusionMatrix,
    pub metadata: RunMetadata,
}

/// Scores predictions against the gold labels of `data`.
pub fn report_from_predictions(
    data: &[PreparedInstance],
    preds: &[Stance],
    metadata: RunMetadata,
) -> Result<MetricsReport, HarnessError> {
    if data.len() != preds.len() {
        return Err(HarnessError::LengthMismatch {
            preds: preds.len(),
            golds: data.len(),
        });
    }
    let mut per_target: BTreeMap<&str, ConfusionMatrix> = BTreeMap::new();
    let mut bucket_confusion: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    let mut bucket_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut kinds: Vec<TargetKind> = Vec::new();
    let mut confusion = ConfusionMatrix::default();
    let mut unbucketed = 0;
    for (inst, &pred) in data.iter().zip(preds) {
        let mut one = ConfusionMatrix::default();
        one.counts[inst.gold.index()][pred.index()] = 1;
        confusion.add(&one);
        per_target.entry(inst.target.as_str()).or_default().add(&one);
        if !kinds.contains(&inst.target_kind) {
            kinds.push(inst.target_kind);
        }
        match depth_bucket(inst.depth, inst.target_kind) {
            Ok(label) => {
                bucket_confusion.entry(label.to_string()).or_default().add(&one);
                *bucket_counts.entry(label.to_string()).or_default() += 1;
            }
            Err(_) => unbucketed += 1,
        }
    }
    for kind in kinds {
        for label in bucket_labels(kind) {
            bucket_counts.entry(label.to_string()).or_default();
        }
    }
    let per_target: Vec<TargetScores> = per_target
        .iter()
        .map(|(t, cm)| TargetScores::from_confusion(t, cm))
        .collect();
    let macro_f_avg = if per_target.is_empty() {
        0.0
    } else {
        per_target.iter().map(|t| t.f_avg).sum::<f64>() / per_target.len() as f64
    };
    Ok(MetricsReport {
        macro_f_avg,
        pooled_f_avg: confusion.f_avg(),
        accuracy: confusion.accuracy(),
        per_target,
        bucket_f_avg: bucket_confusion.iter().map(|(k, cm)| (k.clone(), cm.f_avg())).collect(),
        bucket_counts,
        bucket_confusion,
        unbucketed,
        confusion,
        metadata,
    })
}

pub fn evaluate(model: &Mkian, data: &[PreparedInstance], name: &str) -> MetricsReport {
    let preds = predict(model, data);
    report_from_predictions(data, &preds, RunMetadata::for_model(name, model)).expect("one prediction per instance")
}

/// Refuses to score a checkpoint with data prepared for another encoder.
pub fn check_compatible(model: &Mkian, encoder: &dyn Encoder) -> Result<(), HarnessError> {
    if model.encoder_identity != encoder.identity() {
        return Err(HarnessError::IncompatibleCheckpoint(format!(
            "checkpoint encoder {} but data prepared with {}",
            model.encoder_identity,
            encoder.identity()
        )));
    }
    if model.config.hidden != encoder.dim() {
        return Err(HarnessError::IncompatibleCheckpoint(format!(
            "checkpoint hidden size {} but encoder width {}",
            model.config.hidden,
            encoder.dim()
        )));
    }
    Ok(())
}
