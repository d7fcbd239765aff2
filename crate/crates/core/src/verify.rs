//! Self-checks of the simulator against the analysis, grouped into suites.
//!
//! Each check prints nothing itself; callers format the returned
//! [`Check`]s. The configurations used are exposed so that other harnesses
//! can run the same experiments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compression::{compress, gamma_floor, k_from_sparsity, CompressorSpec};
use crate::error::{Error, Result};
use crate::experiment::{DataSpec, ExperimentConfig, InitSpec, ProblemSpec, Summary};
use crate::linalg::DenseVector;
use crate::metrics::{bound_d, comm_time, theorem_check, CommParams, EpochMaxima};
use crate::problems::{
    partition, Dataset, GradientOracle, LeastSquaresProblem, MlpProblem, QuadraticProblem,
    SyntheticLeastSquares,
};
use crate::protocol::{run_training, Mode, ProtocolConfig, Schedule, TrainingLog};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Linalg,
    Protocol,
    Lemmas,
    Toy,
    Bounds,
    All,
}

impl Suite {
    /// Criterion numbers covered by the suite.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Linalg => &[4],
            Suite::Protocol => &[5, 9, 11, 12],
            Suite::Lemmas => &[3, 6],
            Suite::Toy => &[1, 2],
            Suite::Bounds => &[7, 8, 10],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linalg" => Suite::Linalg,
            "protocol" => Suite::Protocol,
            "lemmas" => Suite::Lemmas,
            "toy" => Suite::Toy,
            "bounds" => Suite::Bounds,
            "all" => Suite::All,
            _ => return Err(Error::config("suite", format!("unknown suite {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:>2} {}: {}", self.criterion, self.name, self.detail)
    }
}

fn check(criterion: u8, name: &str, passed: bool, detail: String) -> Check {
    Check {
        criterion,
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs every criterion of `suite`, in order. An internal error fails its
/// criterion rather than aborting the suite.
pub fn run_suite(suite: Suite) -> Vec<Check> {
    suite.criteria().iter().map(|&c| run_criterion(c)).collect()
}

pub fn run_criterion(criterion: u8) -> Check {
    let result = match criterion {
        1 => toy_optimum(),
        2 => toy_convergence(),
        3 => lemma1_identity(),
        4 => compressor_bound(),
        5 => mode_reduction(),
        6 => gap_inequality(),
        7 => theorem_consistency(),
        8 => bound_condition(),
        9 => nonzero_fraction_growth(),
        10 => comm_model(),
        11 => rho_ordering(),
        12 => unbiasedness(),
        _ => Err(Error::invalid(format!("no criterion {criterion}"))),
    };
    result.unwrap_or_else(|e| check(criterion, "error", false, e.to_string()))
}

/// Seed whose `Normal(20, 1)` initialisation is used for the toy runs.
pub const TOY_SEED: u64 = 10;
/// Step at which the toy snapshot distances are recorded.
pub const TOY_SNAPSHOT_STEP: usize = 210;

/// The three-worker quadratic with `d = 100`, `K = 1`, `α = 0.01`.
pub fn toy_config(mode: Mode, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        problem: ProblemSpec::Quadratic {
            dim: 100,
            centers: vec![1.0, 5.0, 10.0],
        },
        workers: 3,
        weights: None,
        sparsity: None,
        k_uplink: (mode != Mode::Vanilla).then_some(1),
        k_downlink: None,
        schedule: Schedule::Constant { alpha0: 0.01 },
        steps: Some(steps),
        epochs: None,
        seed: TOY_SEED,
        init: InitSpec::Normal { mean: 20.0, std: 1.0 },
        comm: None,
        output_dir: None,
        snapshot_step: (steps >= TOY_SNAPSHOT_STEP).then_some(TOY_SNAPSHOT_STEP),
        track_full_gradient: false,
    }
}

/// Least squares with a block of high-variance features, `d = 10 000`,
/// sparsity 0.001.
pub fn nonzero_config(workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::Bidirectional,
        problem: ProblemSpec::LeastSquares {
            dim: 10_000,
            samples_per_worker: 4,
            batch: 2,
            noise: 0.0,
            heavy_coords: 100,
            heavy_scale: 10.0,
        },
        workers,
        weights: None,
        sparsity: Some(0.001),
        k_uplink: None,
        k_downlink: None,
        schedule: Schedule::Constant { alpha0: 0.1 },
        steps: Some(2000),
        epochs: None,
        seed: 1,
        init: InitSpec::Zeros,
        comm: None,
        output_dir: None,
        snapshot_step: None,
        track_full_gradient: false,
    }
}

/// `[64, 32, 10]` MLP on 2000 synthetic samples, 20 workers, sparsity
/// 0.001, batch 10, 10 epochs.
pub fn mlp_rho_config(mode: Mode, rate: f64) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        problem: ProblemSpec::Mlp {
            layers: vec![64, 32, 10],
            batch: 10,
            dataset: DataSpec::Synthetic {
                samples: 2000,
                classes: 10,
                separation: 2.0,
            },
        },
        workers: 20,
        weights: None,
        sparsity: Some(0.001),
        k_uplink: None,
        k_downlink: None,
        schedule: Schedule::Constant { alpha0: rate },
        steps: None,
        epochs: Some(10),
        seed: 0,
        init: InitSpec::Default,
        comm: None,
        output_dir: None,
        snapshot_step: None,
        track_full_gradient: false,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn toy_optimum() -> Result<Check> {
    let (w_star, f_star) = QuadraticProblem::toy().optimum();
    let exact = 6100.0 / 9.0;
    let rel = (f_star - exact).abs() / exact;
    let w_err = w_star.as_slice().iter().map(|x| (x - 16.0 / 3.0).abs()).fold(0.0, f64::max);
    Ok(check(
        1,
        "toy optimum",
        rel <= 1e-12 && w_err <= 1e-12,
        format!("f* = {f_star} (relative error {rel:.1e}), max |w* - 16/3| = {w_err:.1e}"),
    ))
}

fn toy_convergence() -> Result<Check> {
    let f_star = 6100.0 / 9.0;
    let mut tails = Vec::new();
    let mut ok = true;
    let mut snapshot = None;
    for mode in [Mode::Unidirectional, Mode::Bidirectional] {
        let (log, _) = toy_config(mode, 2000).build()?.run(1)?;
        let tail = &log.records[1800..];
        let within = tail.iter().all(|r| r.loss <= 1.05 * f_star);
        let ups = tail.windows(2).filter(|w| w[1].loss > w[0].loss).count();
        let downs = tail.windows(2).filter(|w| w[1].loss < w[0].loss).count();
        ok &= within && ups > 0 && downs > 0;
        tails.push(mean(tail.iter().map(|r| r.loss)));
        if mode == Mode::Bidirectional {
            snapshot = log.snapshot;
        }
    }
    let snap = snapshot.ok_or_else(|| Error::InvalidState("no snapshot recorded".into()))?;
    ok &= tails[1] <= tails[0] && snap.bidirectional <= snap.unidirectional;
    Ok(check(
        2,
        "toy convergence",
        ok,
        format!(
            "final-200 mean loss uni {:.4}, bi {:.4} (F* = {f_star:.4}); snapshot at t={}: uni {:.3}, bi {:.3}",
            tails[0], tails[1], snap.t, snap.unidirectional, snap.bidirectional
        ),
    ))
}

/// Largest `lemma1_residual / max(1, ‖w̃_{t−1}‖)` over the run.
pub fn lemma1_worst(log: &TrainingLog) -> f64 {
    log.records
        .iter()
        .map(|r| r.lemma1_residual / log.tilde_norms[r.t - 1].max(1.0))
        .fold(0.0, f64::max)
}

fn lemma_least_squares(mode: Mode, steps: usize) -> Result<TrainingLog> {
    let spec = SyntheticLeastSquares {
        dim: 200,
        workers: 5,
        samples_per_worker: 20,
        batch: 4,
        noise: 0.1,
        heavy_coords: 0,
        heavy_scale: 1.0,
    };
    let p = LeastSquaresProblem::synthetic(&spec, &mut rng::stream(3, rng::STREAM_DATA))?;
    let cfg = ProtocolConfig::new(mode, 5, 5, Schedule::Constant { alpha0: 0.1 }, steps);
    run_training(&p, &cfg, DenseVector::zeros(200), 3)
}

fn lemma1_identity() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for mode in Mode::ALL {
        let (toy, _) = toy_config(mode, 1000).build()?.run(1)?;
        worst = worst.max(lemma1_worst(&toy));
        worst = worst.max(lemma1_worst(&lemma_least_squares(mode, 1000)?));
    }
    Ok(check(
        3,
        "corrected iterate identity",
        worst <= 1e-9,
        format!("max residual / max(1, |w~|) = {worst:.2e} over 6 runs"),
    ))
}

fn compressor_bound() -> Result<Check> {
    let mut r = rng::stream(4, rng::STREAM_VERIFY);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut count = 0;
    let mut equality = true;
    for &d in &[10usize, 100, 1000] {
        for &k in &[1, d / 10, d / 2, d] {
            let floor = gamma_floor(d, k)?;
            for _ in 0..84 {
                let scale = 10f64.powf(r.random_range(-3.0..3.0));
                let v: Vec<f64> = (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        scale * z
                    })
                    .collect();
                let out = compress(CompressorSpec::TopK { k }, &DenseVector::new(v)?)?;
                if let Some(g) = out.measured_one_minus_gamma {
                    worst_excess = worst_excess.max(g - floor);
                }
                count += 1;
            }
            let signs: Vec<f64> = (0..d).map(|i| if i % 3 == 0 { -2.5 } else { 2.5 }).collect();
            let g = compress(CompressorSpec::TopK { k }, &DenseVector::new(signs)?)?
                .measured_one_minus_gamma
                .unwrap_or(f64::NAN);
            equality &= (g - floor).abs() <= 1e-12;
        }
    }
    Ok(check(
        4,
        "compressor bound",
        worst_excess <= 1e-12 && equality,
        format!("{count} random vectors, max (1-gamma) - (d-K)/d = {worst_excess:.2e}; equal-magnitude equality: {equality}"),
    ))
}

fn mode_reduction() -> Result<Check> {
    let spec = SyntheticLeastSquares {
        dim: 60,
        workers: 4,
        samples_per_worker: 30,
        batch: 5,
        noise: 0.1,
        heavy_coords: 0,
        heavy_scale: 1.0,
    };
    let p = LeastSquaresProblem::synthetic(&spec, &mut rng::stream(5, rng::STREAM_DATA))?;
    let schedule = Schedule::Constant { alpha0: 0.05 };
    let mut init_rng = rng::stream(5, rng::STREAM_INIT);
    let init = DenseVector::new((0..60).map(|_| init_rng.random_range(-1.0..1.0)).collect())?;
    let vanilla = run_training(&p, &ProtocolConfig::new(Mode::Vanilla, 60, 60, schedule, 500), init.clone(), 5)?;
    let bi = run_training(&p, &ProtocolConfig::new(Mode::Bidirectional, 60, 60, schedule, 500), init, 5)?;
    let worst = vanilla
        .final_model
        .as_slice()
        .iter()
        .zip(bi.final_model.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let losses_match = vanilla
        .records
        .iter()
        .zip(&bi.records)
        .all(|(a, b)| (a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0));
    Ok(check(
        5,
        "mode reduction",
        worst <= 1e-12 && losses_match,
        format!("max coordinate difference after 500 steps = {worst:.1e}; per-step losses match: {losses_match}"),
    ))
}

fn gap_inequality() -> Result<Check> {
    let (log, _) = toy_config(Mode::Bidirectional, 1000).build()?.run(1)?;
    let min = log.records.iter().map(|r| r.gap_inequality_slack).fold(f64::INFINITY, f64::min);
    Ok(check(
        6,
        "gap inequality",
        min >= -1e-9,
        format!("min slack over 1000 bidirectional steps = {min:.3e}"),
    ))
}

fn theorem_consistency() -> Result<Check> {
    let p = QuadraticProblem::toy();
    let mut details = Vec::new();
    let mut ok = true;
    for (label, schedule) in [
        ("alpha=0.01", Schedule::Constant { alpha0: 0.01 }),
        ("alpha=1/(t+1)", Schedule::InversePoly { alpha0: 1.0, theta: 1.0 }),
    ] {
        for mode in [Mode::Unidirectional, Mode::Bidirectional] {
            let mut cfg = ProtocolConfig::new(mode, 1, 1, schedule, 2000);
            cfg.track_full_gradient = true;
            let init = toy_config(mode, 1).build()?.init;
            let log = run_training(&p, &cfg, init, TOY_SEED)?;
            let r = theorem_check(&log, &schedule, QuadraticProblem::LIPSCHITZ, p.optimum().1)?;
            ok &= r.holds;
            details.push(format!("{label} {}: lhs {:.3e} <= rhs {:.3e}", mode.name(), r.lhs, r.rhs));
        }
    }
    Ok(check(7, "theorem consistency", ok, details.join("; ")))
}

fn bound_condition() -> Result<Check> {
    let s = Schedule::Constant { alpha0: 0.1 };
    let d = bound_d(&s, 0.5, 0.5, 10_000)?;
    let rejects = bound_d(&s, 0.5, 1.0, 100).is_err() && bound_d(&s, 0.2, 0.5, 100).is_err();
    Ok(check(
        8,
        "bound condition",
        (d - 0.6).abs() <= 1e-6 && rejects,
        format!("D = {d:.9}; rejects (1+lambda)(1-gamma) >= 1: {rejects}"),
    ))
}

/// Mean of the first and last tenth, and of the final 100 steps, of the
/// non-zero fraction, plus the `min(N·K, d)/d` target.
pub fn nonzero_trend(log: &TrainingLog, workers: usize, k: usize, d: usize) -> (f64, f64, f64, f64) {
    let f: Vec<f64> = log.records.iter().map(|r| r.nonzero_fraction).collect();
    let tenth = (f.len() / 10).max(1);
    let head = mean(f[..tenth].iter().copied());
    let tail = mean(f[f.len() - tenth..].iter().copied());
    let last = mean(f[f.len().saturating_sub(100)..].iter().copied());
    (head, tail, last, (workers * k).min(d) as f64 / d as f64)
}

fn nonzero_fraction_growth() -> Result<Check> {
    let mut ok = true;
    let mut details = Vec::new();
    for workers in [20, 50] {
        let k = k_from_sparsity(10_000, 0.001)?;
        let (log, _) = nonzero_config(workers).build()?.run(1)?;
        let (head, tail, last, target) = nonzero_trend(&log, workers, k, 10_000);
        let pass = tail >= head && (last - target).abs() <= 0.15 * target;
        ok &= pass;
        details.push(format!("N={workers}: first-tenth {head:.4}, last-tenth {tail:.4}, final {last:.4}, target {target:.4}"));
    }
    Ok(check(9, "non-zero fraction", ok, details.join("; ")))
}

fn comm_model() -> Result<Check> {
    let worked = CommParams {
        alpha1: 0.0,
        alpha2: 0.0,
        beta1: 1.0,
        beta2: 1.0,
        workers: 10,
        k_uplink: 5,
        k_downlink: 5,
    };
    let uni = comm_time(Mode::Unidirectional, &worked)?;
    let bi = comm_time(Mode::Bidirectional, &worked)?;
    let mut r = rng::stream(10, rng::STREAM_VERIFY);
    let mut violations = 0;
    for _ in 0..100 {
        let workers = r.random_range(1..=64);
        let k_uplink = r.random_range(1..=1000);
        let p = CommParams {
            alpha1: r.random_range(0.0..1.0),
            alpha2: r.random_range(0.0..1.0),
            beta1: r.random_range(0.0..1e-3),
            beta2: r.random_range(0.0..1e-3),
            workers,
            k_uplink,
            k_downlink: r.random_range(1..=workers * k_uplink),
        };
        if comm_time(Mode::Bidirectional, &p)? > comm_time(Mode::Unidirectional, &p)? {
            violations += 1;
        }
    }
    Ok(check(
        10,
        "comm-time model",
        uni == 110.0 && bi == 20.0 && violations == 0,
        format!("worked example uni {uni}, bi {bi}; {violations} violations in 100 random settings"),
    ))
}

/// Runs `cfg(rate)` over `0.01..=0.25` and returns the rate with the lowest
/// final loss together with its summary.
pub fn tune_rate(cfg: impl Fn(f64) -> ExperimentConfig) -> Result<(f64, Summary)> {
    let mut best: Option<(f64, Summary)> = None;
    for rate in crate::experiment::default_grid() {
        match cfg(rate).build()?.run(1) {
            Ok((_, s)) => {
                if best.as_ref().is_none_or(|(_, b)| s.final_loss < b.final_loss) {
                    best = Some((rate, s));
                }
            }
            Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::InvalidState("every rate diverged".into()))
}

/// Epochs where the bidirectional per-epoch maximum `ρ` is strictly below
/// the unidirectional per-epoch maximum `ρ̂`.
pub fn rho_wins(bi: &[EpochMaxima], uni: &[EpochMaxima]) -> usize {
    bi.iter()
        .zip(uni)
        .filter(|(b, u)| matches!((b.rho, u.rho_hat), (Some(r), Some(h)) if r < h))
        .count()
}

fn rho_ordering() -> Result<Check> {
    let (rate_uni, uni) = tune_rate(|r| mlp_rho_config(Mode::Unidirectional, r))?;
    let (rate_bi, bi) = tune_rate(|r| mlp_rho_config(Mode::Bidirectional, r))?;
    let wins = rho_wins(&bi.epoch_maxima, &uni.epoch_maxima);
    let epochs = bi.epoch_maxima.len().min(uni.epoch_maxima.len());
    Ok(check(
        11,
        "rho vs rho-hat",
        epochs == 10 && wins >= 8,
        format!("rho < rho-hat in {wins}/{epochs} epochs (tuned rates: uni {rate_uni}, bi {rate_bi})"),
    ))
}

fn unbiasedness() -> Result<Check> {
    let mut r = rng::stream(12, rng::STREAM_VERIFY);
    let d = 7;
    let rows: Vec<f64> = (0..6 * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let w = DenseVector::new((0..d).map(|_| r.random_range(-1.0..1.0)).collect())?;
    let mut worst: f64 = 0.0;
    for batch in 1..=6 {
        let p = LeastSquaresProblem::new(d, vec![(rows.clone(), targets.clone())], vec![1.0], batch)?;
        let full = p.full_gradient(&w)?;
        let subsets: Vec<Vec<usize>> = (0u32..64)
            .filter(|m| m.count_ones() as usize == batch)
            .map(|m| (0..6).filter(|i| m & (1 << i) != 0).collect())
            .collect();
        let mut avg = DenseVector::zeros(d);
        for s in &subsets {
            avg.axpy_assign(1.0 / subsets.len() as f64, &p.minibatch_gradient(0, &w, s)?)?;
        }
        worst = worst.max(avg.distance(&full)?);
    }

    let data = Dataset::synthetic(60, 6, 4, 1.0, &mut rng::stream(12, rng::STREAM_DATA))?;
    let part = partition(data.len(), 2, &mut rng::stream(12, rng::STREAM_PARTITION))?;
    let mlp = MlpProblem::new(vec![6, 8, 4], std::sync::Arc::new(data), part, 8)?;
    let theta = mlp.init_params(&mut rng::stream(12, rng::STREAM_INIT));
    let batch: Vec<usize> = (0..20).collect();
    let (_, grad) = mlp.loss_grad(&theta, &batch)?;
    let h = 1e-5;
    let mut fd_worst: f64 = 0.0;
    for j in (0..50).map(|i| i * theta.dim() / 50) {
        let mut plus = theta.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[j] += h;
        minus[j] -= h;
        let fd = (mlp.loss(&DenseVector::new(plus)?, &batch)? - mlp.loss(&DenseVector::new(minus)?, &batch)?) / (2.0 * h);
        fd_worst = fd_worst.max((fd - grad[j]).abs());
    }
    Ok(check(
        12,
        "unbiasedness",
        worst <= 1e-12 && fd_worst <= 1e-5,
        format!("minibatch enumeration error {worst:.1e}; max finite-difference error {fd_worst:.1e} over 50 coordinates"),
    ))
}
