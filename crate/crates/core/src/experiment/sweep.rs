use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Schedule;

use super::{write_run, ExperimentConfig};

/// `0.01, 0.02, …, 0.25`.
pub fn default_grid() -> Vec<f64> {
    (1..=25).map(|i| i as f64 / 100.0).collect()
}

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config("grid", format!("not a number: {s:?}")))
    };
    let rates = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(Error::config("grid", "range form is start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(Error::config("grid", "need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded so that 0.01:0.25:0.01 yields 0.06 rather than 0.060000000000000005.
        (0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::config("grid", "rates must be positive and finite"));
    }
    Ok(rates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rate: f64,
    pub final_loss: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub status: SweepStatus,
    /// Step and quantity that went non-finite.
    pub divergence: Option<String>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Rate with the lowest final loss among cells that did not diverge.
    pub best_rate: Option<f64>,
}

fn with_rate(schedule: Schedule, rate: f64) -> Schedule {
    match schedule {
        Schedule::Constant { .. } => Schedule::Constant { alpha0: rate },
        Schedule::InversePoly { theta, .. } => Schedule::InversePoly { alpha0: rate, theta },
    }
}

/// Runs `base` once per rate (replacing `alpha0`), each into `out/rate_<r>`,
/// and writes `out/sweep.csv`. A diverged cell is recorded and the sweep
/// continues; any other error aborts.
pub fn sweep_lr(base: &ExperimentConfig, grid: &[f64], out: &Path, threads: usize) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::config("grid", "empty grid"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cells = Vec::with_capacity(grid.len());
    for &rate in grid {
        let mut cfg = base.clone();
        cfg.schedule = with_rate(base.schedule, rate);
        let dir = out.join(format!("rate_{rate}"));
        cfg.output_dir = Some(dir.clone());
        let exp = cfg.build()?;
        let cell = match exp.run(threads) {
            Ok((log, summary)) => {
                write_run(&dir, &log, &summary)?;
                SweepCell {
                    rate,
                    final_loss: Some(summary.final_loss),
                    best_accuracy: summary.epoch_accuracy.iter().copied().reduce(f64::max),
                    status: SweepStatus::Ok,
                    divergence: None,
                    dir,
                }
            }
            Err(Error::Divergence { step, what }) => SweepCell {
                rate,
                final_loss: None,
                best_accuracy: None,
                status: SweepStatus::Diverged,
                divergence: Some(format!("step {step}: {what}")),
                dir,
            },
            Err(e) => return Err(e),
        };
        cells.push(cell);
    }
    write_sweep_csv(&out.join("sweep.csv"), &cells)?;
    let best_rate = cells
        .iter()
        .filter_map(|c| c.final_loss.map(|l| (c.rate, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r);
    Ok(SweepReport { cells, best_rate })
}

fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["rate", "final_loss", "best_accuracy", "status"]).map_err(csv_err)?;
    for c in cells {
        let status = match c.status {
            SweepStatus::Ok => "ok",
            SweepStatus::Diverged => "diverged",
        };
        w.write_record([format!("{:?}", c.rate), opt(c.final_loss), opt(c.best_accuracy), status.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = default_grid();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[24], 0.25);
        assert_eq!(parse_grid("0.01:0.25:0.01").unwrap(), g);
        assert_eq!(parse_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_grid("0.1,x").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0,0.1").is_err());
    }
}
