//! Training, evaluation and the experiment protocols.

pub mod evaluate;
pub mod heatmap;
pub mod metrics;
pub mod protocols;
pub mod report;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::conversation::DataError;
use crate::kam::KamError;
use crate::mkian::ModelError;

pub use evaluate::{check_compatible, evaluate, report_from_predictions, MetricsReport, RunMetadata, TargetScores};
pub use heatmap::{relation_stance_heatmap, ConditionalTable, RelationStanceTables};
pub use metrics::{f_avg, f_score, ConfusionMatrix};
pub use protocols::{
    ablation_variants, annotate_instances, needed_kinds, AblationRow, AblationTable, CrossTargetResult, Experiment,
    RunResult, SeedSummary, CROSS_TARGET_PAIRS, TARGET_CODES,
};
pub use report::RunDir;
pub use train::{batch_gradient, confusion, predict, train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch} (non-finite loss or weights)")]
    Divergence { epoch: usize },
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kam(#[from] KamError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}
