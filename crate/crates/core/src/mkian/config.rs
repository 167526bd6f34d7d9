use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Nonlinearity used by the local, contextual and relational layers. The
/// multi-hop fusion always uses the logistic sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which rows survive the local layer's output mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocalMask {
    /// The receptive-field window of the target row, `2(γ-1)+1` rows ending
    /// at row n. Rows outside it are zeroed before and after convolution.
    #[default]
    Window,
    /// Only row n is kept; the convolutions see the whole chain.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    Frozen,
    /// Token embeddings are trained with the rest of the model. Needs an
    /// encoder that exposes a lookup table.
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden size D; must equal the encoder's output width.
    pub hidden: usize,
    /// Convolution width γ (odd).
    pub kernel_size: usize,
    /// Residual scale λ of the multi-hop update.
    pub lambda: f64,
    /// Number of attention hops p.
    pub hops: usize,
    pub activation: Activation,
    pub gcn_normalize: bool,
    pub local_mask: LocalMask,
    /// Keep `unknown` logical relations as a fifth edge type.
    pub keep_unknown: bool,
    /// Dropout on the classifier input during training.
    pub dropout: f64,
    pub encoder_mode: EncoderMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 768,
            kernel_size: 3,
            lambda: 0.1,
            hops: 3,
            activation: Activation::Relu,
            gcn_normalize: true,
            local_mask: LocalMask::Window,
            keep_unknown: false,
            dropout: 0.0,
            encoder_mode: EncoderMode::Frozen,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 {
            return bad("hidden size must be >= 1".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd and >= 1, got {}", self.kernel_size));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.hops == 0 {
            return bad("hop count must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Stable hash of the configuration plus the encoder identity.
    pub fn fingerprint(&self, encoder_identity: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update([0u8]);
        h.update(encoder_identity.as_bytes());
        hex::encode(h.finalize())
    }
}

/// The four knowledge streams, in classifier-input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Local,
    Contextual,
    Logical,
    Act,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Local, Stream::Contextual, Stream::Logical, Stream::Act];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Prefix shared by every parameter group owned by this stream.
    pub fn prefix(self) -> &'static str {
        match self {
            Stream::Local => "local.",
            Stream::Contextual => "contextual.",
            Stream::Logical => "logical.",
            Stream::Act => "act.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_local: bool,
    pub use_contextual: bool,
    pub use_logical: bool,
    pub use_act: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags::ALL_ON
    }
}

impl AblationFlags {
    pub const ALL_ON: AblationFlags = AblationFlags {
        use_local: true,
        use_contextual: true,
        use_logical: true,
        use_act: true,
    };

    pub fn enabled(&self, s: Stream) -> bool {
        match s {
            Stream::Local => self.use_local,
            Stream::Contextual => self.use_contextual,
            Stream::Logical => self.use_logical,
            Stream::Act => self.use_act,
        }
    }

    pub fn without(s: Stream) -> AblationFlags {
        let mut f = AblationFlags::ALL_ON;
        match s {
            Stream::Local => f.use_local = false,
            Stream::Contextual => f.use_contextual = false,
            Stream::Logical => f.use_logical = false,
            Stream::Act => f.use_act = false,
        }
        f
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if Stream::ALL.iter().any(|&s| self.enabled(s)) {
            Ok(())
        } else {
            Err(ModelError::Config(
                "at least one knowledge layer must stay enabled".into(),
            ))
        }
    }

    pub fn disabled_streams(&self) -> Vec<Stream> {
        Stream::ALL.into_iter().filter(|&s| !self.enabled(s)).collect()
    }
}
