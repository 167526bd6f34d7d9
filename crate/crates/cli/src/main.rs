mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "csd", version, about = "Conversational stance detection pipeline")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate threads, build instances and write the split manifest
    Ingest,
    /// Fill the relation annotation cache
    Annotate {
        /// Print the number of prompts without sending any
        #[arg(long)]
        dry_run: bool,
    },
    /// Train and evaluate one model per seed
    Train {
        /// Disable one layer: local, contextual, logical or act
        #[arg(long)]
        ablate: Option<String>,
        /// Comma-separated seeds
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Score a checkpoint on the test split, or a predictions file
    Eval {
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSONL of {"id", "stance"}
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Full model and the four single-layer ablations
    Ablate {
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Train on one target, test on another
    Crosstarget {
        /// `standard` (alias `table9`) or SRC:DST pairs such as DT:JB,TS:SX
        #[arg(long, default_value = "standard")]
        pairs: String,
        /// List the pairs without training
        #[arg(long)]
        dry_run: bool,
    },
    /// Summarize run reports; with --data also the relation/stance tables
    Report,
    /// Write the seeded synthetic corpus
    GenSynthetic {
        #[arg(long, default_value_t = 12)]
        threads_per_target: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::GenSynthetic { threads_per_target } = cli.command {
        let out = cli.common.out.unwrap_or_else(|| PathBuf::from("fixtures/synthetic"));
        return commands::gen_synthetic(&out, threads_per_target, cli.common.seed.unwrap_or(2024));
    }
    let mut cfg = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Annotate { dry_run } => commands::annotate(&cfg, dry_run),
        Command::Train { ablate, seeds } => {
            if let Some(s) = seeds {
                cfg.seeds = commands::parse_seeds(&s)?;
            }
            commands::train(&cfg, ablate.as_deref())
        }
        Command::Eval {
            checkpoint,
            predictions,
        } => commands::eval(&cfg, checkpoint.as_deref(), predictions.as_deref()),
        Command::Ablate { seeds } => {
            if let Some(s) = seeds {
                cfg.seeds = commands::parse_seeds(&s)?;
            }
            commands::ablate(&cfg)
        }
        Command::Crosstarget { pairs, dry_run } => commands::crosstarget(&cfg, &pairs, dry_run),
        Command::Report => commands::report(&cfg),
        Command::GenSynthetic { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
