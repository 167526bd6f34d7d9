//! The stance classifier: sentence encoding, the local, contextual,
//! logical-relation and conversation-act layers, multi-hop attention fusion
//! and a softmax head, with hand-written backpropagation.

pub mod config;
pub mod encoder;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;

use thiserror::Error;

use crate::graph::GraphError;
use crate::kam::RelationKind;

pub use config::{AblationFlags, Activation, EncoderMode, LocalMask, ModelConfig, Stream};
pub use encoder::{build_input_sequence, encode, Encoder, HashEncoder, HttpEncoder, InputSequence};
pub use model::{prepare, Checkpoint, LayerOutputs, Mkian, PreparedInstance, StanceDistribution};
pub use optim::Adam;
pub use params::{ModelParams, RgcnLayerParams, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("encoder failure: {0}")]
    Encoder(String),
    #[error("sequence of {tokens} tokens exceeds the encoder window of {window}")]
    SequenceOverflow { tokens: usize, window: usize },
    #[error("instance {id} has no {kind:?} annotations")]
    MissingAnnotations { id: String, kind: RelationKind },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}
