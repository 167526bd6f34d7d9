//! Run directories and JSON/CSV report files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::evaluate::MetricsReport;
use super::protocols::{AblationTable, CrossTargetResult};
use super::train::EpochRecord;
use super::HarnessError;
use crate::mkian::Checkpoint;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, json + "\n").map_err(io_err(path))
}

fn write_csv<F>(path: &Path, fill: F) -> Result<(), HarnessError>
where
    F: FnOnce(&mut csv::Writer<fs::File>) -> csv::Result<()>,
{
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    fill(&mut w)
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| HarnessError::Csv(format!("{}: {e}", path.display())))
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), HarnessError> {
    write_csv(path, |w| {
        w.write_record(["epoch", "train_loss", "train_accuracy", "dev_f_avg"])?;
        for r in history {
            w.serialize(r)?;
        }
        Ok(())
    })
}

/// One row per target plus a final `Avg.` row (macro mean), then one row per
/// depth bucket.
pub fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<(), HarnessError> {
    write_csv(path, |w| {
        w.write_record(["section", "name", "count", "f_favor", "f_against", "f_avg"])?;
        for t in &report.per_target {
            w.write_record([
                "target".to_string(),
                t.target.clone(),
                t.count.to_string(),
                t.f_favor.to_string(),
                t.f_against.to_string(),
                t.f_avg.to_string(),
            ])?;
        }
        w.write_record(["target", "Avg.", "", "", "", &report.macro_f_avg.to_string()])?;
        for (label, count) in &report.bucket_counts {
            let f = report.bucket_f_avg.get(label).map(f64::to_string).unwrap_or_default();
            w.write_record(["depth", label, &count.to_string(), "", "", &f])?;
        }
        Ok(())
    })
}

pub fn write_cross_target_csv(path: &Path, rows: &[CrossTargetResult]) -> Result<(), HarnessError> {
    write_csv(path, |w| {
        w.write_record(["pair", "source", "dest", "f_avg"])?;
        for r in rows {
            w.write_record([r.label.as_str(), &r.source, &r.dest, &r.f_avg.to_string()])?;
        }
        Ok(())
    })
}

pub fn write_ablation_csv(path: &Path, table: &AblationTable) -> Result<(), HarnessError> {
    write_csv(path, |w| {
        w.write_record(["variant", "f_avg", "delta"])?;
        for r in &table.rows {
            w.write_record([r.variant.as_str(), &r.f_avg.to_string(), &r.delta.to_string()])?;
        }
        Ok(())
    })
}

/// `runs/<name>/{config.json, checkpoint.json, history.csv, report.json}`
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(base: &Path, name: &str) -> Result<RunDir, HarnessError> {
        let root = base.join(name);
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(RunDir { root })
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<(), HarnessError> {
        write_json(&self.config_path(), config)
    }

    pub fn write_checkpoint(&self, ckpt: &Checkpoint) -> Result<(), HarnessError> {
        Ok(ckpt.save(&self.checkpoint_path())?)
    }

    pub fn write_history(&self, history: &[EpochRecord]) -> Result<(), HarnessError> {
        write_history_csv(&self.history_path(), history)
    }

    /// `report.json` plus a `report.csv` next to it.
    pub fn write_report(&self, report: &MetricsReport) -> Result<(), HarnessError> {
        write_json(&self.report_path(), report)?;
        write_report_csv(&self.root.join("report.csv"), report)
    }
}
