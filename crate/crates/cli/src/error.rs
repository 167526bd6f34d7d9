use std::fmt;

use csd_core::conversation::DataError;
use csd_core::harness::HarnessError;
use csd_core::kam::KamError;
use csd_core::mkian::ModelError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn provider(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_PROVIDER,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<KamError> for CliError {
    fn from(e: KamError) -> Self {
        match e {
            KamError::Index { .. } | KamError::EmptyChain => CliError::input(e.to_string()),
            _ => CliError::provider(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Encoder(_) | ModelError::MissingAnnotations { .. } => CliError::provider(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Divergence { .. } => CliError {
                code: EXIT_DIVERGENCE,
                message: e.to_string(),
            },
            HarnessError::Model(m) => m.into(),
            HarnessError::Kam(k) => k.into(),
            _ => CliError::input(e.to_string()),
        }
    }
}
