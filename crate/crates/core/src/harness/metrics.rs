//! Favor/against F1 and their mean, the stance-detection headline metric.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::conversation::Stance;

/// Counts indexed `[gold][predicted]` in (against, favor, none) order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels(preds: &[Stance], golds: &[Stance]) -> Result<Self, HarnessError> {
        check_lengths(preds, golds)?;
        let mut m = ConfusionMatrix::default();
        for (p, g) in preds.iter().zip(golds) {
            m.counts[g.index()][p.index()] += 1;
        }
        Ok(m)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for g in 0..3 {
            for p in 0..3 {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..3).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn precision(&self, cls: Stance) -> f64 {
        let k = cls.index();
        let predicted: usize = (0..3).map(|g| self.counts[g][k]).sum();
        ratio(self.counts[k][k], predicted)
    }

    pub fn recall(&self, cls: Stance) -> f64 {
        let k = cls.index();
        let gold: usize = self.counts[k].iter().sum();
        ratio(self.counts[k][k], gold)
    }

    /// F1 of `cls`; 0 when precision and recall are both 0.
    pub fn f1(&self, cls: Stance) -> f64 {
        let p = self.precision(cls);
        let r = self.recall(cls);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn f_avg(&self) -> f64 {
        (self.f1(Stance::Favor) + self.f1(Stance::Against)) / 2.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(preds: &[Stance], golds: &[Stance]) -> Result<(), HarnessError> {
    if preds.len() != golds.len() {
        return Err(HarnessError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    Ok(())
}

pub fn f_score(preds: &[Stance], golds: &[Stance], cls: Stance) -> Result<f64, HarnessError> {
    Ok(ConfusionMatrix::from_labels(preds, golds)?.f1(cls))
}

/// `(F_favor + F_against) / 2`
pub fn f_avg(preds: &[Stance], golds: &[Stance]) -> Result<f64, HarnessError> {
    Ok(ConfusionMatrix::from_labels(preds, golds)?.f_avg())
}
