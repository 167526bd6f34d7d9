//! Run configuration: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use csd_core::harness::TrainConfig;
use csd_core::kam::ProviderConfig;
use csd_core::mkian::{Encoder, HashEncoder, HttpEncoder, ModelConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Seeded hash-bucket embeddings; offline.
    #[default]
    Hash,
    /// Pretrained encoder behind the HTTP embedding adapter.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub seed: u64,
    pub buckets: usize,
    pub endpoint: String,
    pub model: String,
    pub max_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Hash,
            seed: 11,
            buckets: 4096,
            endpoint: String::new(),
            model: "bert-base-uncased".to_string(),
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    /// Seeds for multi-run summaries; empty means `[seed]`.
    pub seeds: Vec<u64>,
    /// Seed of the train/dev/test split when no manifest exists.
    pub split_seed: u64,
    /// Annotation cache; defaults to `<out>/annotations.jsonl`.
    pub cache: Option<PathBuf>,
    /// Use the offline rule-based relation provider.
    pub stub: bool,
    pub provider: ProviderConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            target: None,
            out: PathBuf::from("runs"),
            seed: 13,
            seeds: Vec::new(),
            split_seed: 1,
            cache: None,
            stub: false,
            provider: ProviderConfig::default(),
            encoder: EncoderConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. `None` leaves the config value alone.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// JSONL file or directory of JSONL files
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Restrict to one target (name or short code such as TS)
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// JSON run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Offline rule-based relation provider; no network
    #[arg(long, global = true)]
    pub stub: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), e.line())))
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &args.data {
            cfg.data = Some(d.clone());
        }
        if let Some(t) = &args.target {
            cfg.target = Some(t.clone());
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        cfg.stub |= args.stub;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(d) = &self.data {
            if !d.exists() {
                return Err(CliError::input(format!("data path {} does not exist", d.display())));
            }
        }
        self.model.validate().map_err(|e| CliError::input(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::input(e.to_string()))?;
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::input("no data given (use --data or set `data` in the config)"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.out.join("annotations.jsonl"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.json")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Encoder sized to the model's hidden width.
    pub fn build_encoder(&self) -> Result<Box<dyn Encoder>, CliError> {
        let e = &self.encoder;
        match e.kind {
            EncoderKind::Hash => Ok(Box::new(
                HashEncoder::with_buckets(self.model.hidden, e.buckets, e.seed).with_max_tokens(e.max_tokens),
            )),
            EncoderKind::Http => {
                if e.endpoint.is_empty() {
                    return Err(CliError::input("encoder.endpoint is required for the http encoder"));
                }
                Ok(Box::new(HttpEncoder::new(
                    &e.endpoint,
                    &e.model,
                    self.model.hidden,
                    e.max_tokens,
                )))
            }
        }
    }
}
