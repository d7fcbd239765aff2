//! Config-driven runs and their on-disk artifacts.
//!
//! A run directory holds `metrics.csv` (one row per step, columns in
//! [`CSV_COLUMNS`] order), `summary.json` and `model.bin`.

mod config;
mod plot;
mod sweep;

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FilePosition, Result};
use crate::linalg::DenseVector;
use crate::metrics::{comm_time, per_epoch_maxima, theorem_check, BoundReport, EpochMaxima, StepRecord, CSV_COLUMNS};
use crate::protocol::{run_training, Snapshot, TrainingLog};

pub use config::{DataSpec, Experiment, ExperimentConfig, InitSpec, LinkParams, ProblemSpec};
pub use plot::{plot_data, read_metrics, PlotRow};
pub use sweep::{default_grid, parse_grid, sweep_lr, SweepCell, SweepReport, SweepStatus};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First eight bytes of `model.bin`.
pub const MODEL_MAGIC: &[u8; 8] = b"SGSIM001";

/// Sizes fixed by the config after resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub dim: usize,
    pub workers: usize,
    pub k_uplink: usize,
    pub k_downlink: usize,
    pub steps: usize,
    pub steps_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSummary {
    pub per_round: f64,
    pub total: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub f_star: Option<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_maxima: Vec<EpochMaxima>,
    pub epoch_accuracy: Vec<f64>,
    pub comm: Option<CommSummary>,
    pub bound: Option<BoundReport>,
    /// Why `bound` is absent, if it was requested but could not be evaluated.
    pub bound_note: Option<String>,
    pub max_lemma1_residual: f64,
    pub min_gap_inequality_slack: f64,
    pub snapshot: Option<Snapshot>,
    pub wall_clock_secs: f64,
}

impl Experiment {
    /// Trains and summarises without touching the filesystem.
    pub fn run(&self, threads: usize) -> Result<(TrainingLog, Summary)> {
        let mut protocol = self.protocol.clone();
        protocol.threads = threads.max(1);
        let log = run_training(self.oracle.as_ref(), &protocol, self.init.clone(), self.config.seed)?;
        let summary = self.summarise(&log)?;
        Ok((log, summary))
    }

    fn summarise(&self, log: &TrainingLog) -> Result<Summary> {
        let epoch_maxima = match log.steps_per_epoch {
            Some(spe) => per_epoch_maxima(&log.records, spe)?,
            None => Vec::new(),
        };
        let comm = match &self.comm {
            Some(p) => comm_time(self.protocol.mode, p).ok().map(|per_round| CommSummary {
                per_round,
                total: per_round * self.protocol.steps as f64,
            }),
            None => None,
        };
        let (bound, bound_note) = match (self.lipschitz, self.f_star, log.full_grad_norm_sq.is_some()) {
            (Some(l), Some(f_star), true) => match theorem_check(log, &self.protocol.schedule, l, f_star) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            },
            (_, _, true) => (None, Some("no known Lipschitz constant or optimum for this problem".into())),
            _ => (None, None),
        };
        Ok(Summary {
            version: VERSION.to_string(),
            config: self.config.clone(),
            resolved: Resolved {
                dim: self.oracle.dim(),
                workers: self.oracle.num_workers(),
                k_uplink: self.protocol.k_uplink,
                k_downlink: self.protocol.k_downlink,
                steps: self.protocol.steps,
                steps_per_epoch: log.steps_per_epoch,
            },
            f_star: self.f_star,
            initial_loss: log.initial_loss,
            final_loss: log.final_loss(),
            epoch_maxima,
            epoch_accuracy: log.epoch_accuracy.clone(),
            comm,
            bound,
            bound_note,
            max_lemma1_residual: log.records.iter().map(|r| r.lemma1_residual).fold(0.0, f64::max),
            min_gap_inequality_slack: log
                .records
                .iter()
                .map(|r| r.gap_inequality_slack)
                .fold(f64::INFINITY, f64::min),
            snapshot: log.snapshot.clone(),
            wall_clock_secs: log.wall_clock_secs,
        })
    }
}

/// Output directory: the override, else the config's, else `out`.
pub fn output_dir(cfg: &ExperimentConfig, overridden: Option<&Path>) -> PathBuf {
    overridden
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Builds, runs and writes all three artifacts into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, threads: usize) -> Result<Summary> {
    let exp = cfg.build()?;
    let (log, summary) = exp.run(threads)?;
    write_run(dir, &log, &summary)?;
    Ok(summary)
}

pub fn write_run(dir: &Path, log: &TrainingLog, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_metrics(&dir.join("metrics.csv"), &log.records)?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).expect("summary serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    write_model(&dir.join("model.bin"), &log.final_model)
}

pub fn write_metrics(path: &Path, records: &[StepRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_model(path: &Path, w: &DenseVector) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MODEL_MAGIC)?;
    write(&(w.dim() as u64).to_le_bytes())?;
    for x in w.as_slice() {
        write(&x.to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<DenseVector> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        position: FilePosition::Offset(offset as u64),
        message,
    };
    if bytes.len() < 16 {
        return Err(bad(bytes.len(), "truncated header".into()));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(bad(0, "bad magic".into()));
    }
    let d = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != d.saturating_mul(8) {
        return Err(bad(bytes.len(), format!("expected {d} values, found {} bytes", body.len())));
    }
    DenseVector::new(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let w = DenseVector::new(vec![1.5, -0.0, 3e-300]).unwrap();
        write_model(&path, &w).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], b"SGSIM001");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(read_model(&path).unwrap(), w);
        fs::write(&path, &bytes[..30]).unwrap();
        assert!(matches!(read_model(&path), Err(Error::Format { .. })));
    }
}
