use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FilePosition, Result};
use crate::metrics::{per_epoch_maxima, StepRecord};

use super::Summary;

/// One long-format row: a per-epoch maximum of one metric in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub run: String,
    pub mode: String,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                position: FilePosition::Line(e.position().map_or(0, |p| p.line())),
                message: e.to_string(),
            })
        })
        .collect()
}

fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        position: FilePosition::Line(e.line() as u64),
        message: e.to_string(),
    })
}

/// Per-epoch maxima of `rho`, `rho_hat` and both contraction columns for
/// each run directory, in long format. Runs without epochs are grouped in
/// windows of `window` steps.
pub fn plot_data(runs: &[&Path], window: usize, out: &Path) -> Result<Vec<PlotRow>> {
    let mut rows = Vec::new();
    for dir in runs {
        let summary = read_summary(&dir.join("summary.json"))?;
        let records = read_metrics(&dir.join("metrics.csv"))?;
        let group = summary.resolved.steps_per_epoch.unwrap_or(window);
        let run = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for m in per_epoch_maxima(&records, group)? {
            let metrics = [
                ("rho", m.rho),
                ("rho_hat", m.rho_hat),
                ("one_minus_gamma_uplink", m.one_minus_gamma_uplink),
                ("one_minus_gamma_downlink", m.one_minus_gamma_downlink),
            ];
            for (metric, value) in metrics {
                if let Some(value) = value {
                    rows.push(PlotRow {
                        run: run.clone(),
                        mode: summary.config.mode.name().to_string(),
                        epoch: m.epoch,
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
    }
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e.into(),
    })?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}
