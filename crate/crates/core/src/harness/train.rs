use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use super::HarnessError;
use crate::conversation::Stance;
use crate::mkian::{AblationFlags, Adam, EncoderMode, Mkian, ModelParams, PreparedInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub flags: AblationFlags,
    pub encoder_mode: EncoderMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 13,
            flags: AblationFlags::ALL_ON,
            encoder_mode: EncoderMode::Frozen,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(HarnessError::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch size must be >= 1".into()));
        }
        self.flags.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_f_avg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best selection score.
    pub model: Mkian,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_dev_f_avg: f64,
}

pub fn predict(model: &Mkian, data: &[PreparedInstance]) -> Vec<Stance> {
    data.par_iter().map(|p| model.forward(p).predicted()).collect()
}

pub fn confusion(model: &Mkian, data: &[PreparedInstance]) -> ConfusionMatrix {
    let preds = predict(model, data);
    let golds: Vec<Stance> = data.iter().map(|p| p.gold).collect();
    ConfusionMatrix::from_labels(&preds, &golds).expect("one prediction per instance")
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Array1<f64> {
    let keep = 1.0 / (1.0 - p);
    Array1::from_shape_simple_fn(len, || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

/// Mean loss and mean gradient over a batch. Per-instance gradients are
/// computed in parallel and summed in batch order, so the result does not
/// depend on thread scheduling.
pub fn batch_gradient(model: &Mkian, batch: &[&PreparedInstance], masks: &[Option<Array1<f64>>]) -> (f64, ModelParams) {
    let parts: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(p, m)| model.loss_and_grad(p, m.as_ref()))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.add_scaled(g, scale);
    }
    (loss * scale, grads)
}

/// Mini-batch Adam on cross-entropy with early stopping on dev F_avg. With an
/// empty dev set the training F_avg selects the checkpoint instead.
pub fn train(
    initial: Mkian,
    train_set: &[PreparedInstance],
    dev_set: &[PreparedInstance],
    config: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if initial.flags != config.flags {
        return Err(HarnessError::Config("model and training ablation flags differ".into()));
    }
    let mut model = initial;
    let mut best = TrainOutcome {
        model: model.clone(),
        history: Vec::new(),
        best_epoch: 0,
        best_dev_f_avg: f64::NEG_INFINITY,
    };
    if config.max_epochs == 0 || train_set.is_empty() {
        best.best_dev_f_avg = 0.0;
        return Ok(best);
    }
    let frozen = model.frozen_prefixes();
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = 4 * model.config.hidden;
    let dropout = model.config.dropout;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedInstance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let masks: Vec<Option<Array1<f64>>> = batch
                .iter()
                .map(|_| (dropout > 0.0).then(|| dropout_mask(&mut rng, width, dropout)))
                .collect();
            let (loss, grads) = batch_gradient(&model, &batch, &masks);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(HarnessError::Divergence { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut model.params, &grads, &frozen);
        }
        if !model.params.all_finite() {
            return Err(HarnessError::Divergence { epoch });
        }
        let train_cm = confusion(&model, train_set);
        let dev_f_avg = if dev_set.is_empty() {
            train_cm.f_avg()
        } else {
            confusion(&model, dev_set).f_avg()
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: train_cm.accuracy(),
            dev_f_avg,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} dev F_avg {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.dev_f_avg
        );
        history.push(record);
        // ties move the checkpoint forward but do not reset the patience count
        if dev_f_avg > best.best_dev_f_avg {
            stale = 0;
        } else {
            stale += 1;
        }
        if dev_f_avg >= best.best_dev_f_avg {
            best.model = model.clone();
            best.best_epoch = epoch;
            best.best_dev_f_avg = dev_f_avg;
        }
        if stale >= config.patience {
            break;
        }
    }
    best.history = history;
    Ok(best)
}
