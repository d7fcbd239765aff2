use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::CompressorSpec;
use crate::error::{Error, Result};
use crate::linalg::{weighted_sum, DenseVector};
use crate::metrics::{gap_inequality_check, lemma1_residual, ratio, snapshot_distances, split_from_parts, StepRecord};
use crate::problems::GradientOracle;
use crate::rng;

use super::{memory_total, Mode, Schedule, ServerState, WorkerState, WorkerStep};

/// Protocol settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: Mode,
    /// Per-worker message budget. Ignored in vanilla mode.
    pub k_uplink: usize,
    /// Server broadcast budget. Used in bidirectional mode only.
    pub k_downlink: usize,
    pub schedule: Schedule,
    /// Number of iterations `T`.
    pub steps: usize,
    /// Step at which to record the full-vs-compressed snapshot distances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_step: Option<usize>,
    /// Also record `‖∇F(w_t)‖²` for `t = 0..=T` (one full-data pass per step).
    #[serde(default)]
    pub track_full_gradient: bool,
    /// Threads for per-worker gradient evaluation. Results do not depend on it.
    #[serde(skip, default = "one_thread")]
    pub threads: usize,
}

fn one_thread() -> usize {
    1
}

impl ProtocolConfig {
    pub fn new(mode: Mode, k_uplink: usize, k_downlink: usize, schedule: Schedule, steps: usize) -> Self {
        ProtocolConfig {
            mode,
            k_uplink,
            k_downlink,
            schedule,
            steps,
            snapshot_step: None,
            track_full_gradient: false,
            threads: 1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.mode != Mode::Vanilla {
            CompressorSpec::TopK { k: self.k_uplink }.validate(dim)?;
        }
        if self.mode == Mode::Bidirectional {
            CompressorSpec::TopK { k: self.k_downlink }.validate(dim)?;
        }
        if let Some(s) = self.snapshot_step {
            if s == 0 || s > self.steps {
                return Err(Error::invalid(format!("snapshot_step must be in [1, {}], got {s}", self.steps)));
            }
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be >= 1"));
        }
        Ok(())
    }

    fn uplink(&self) -> CompressorSpec {
        match self.mode {
            Mode::Vanilla => CompressorSpec::Identity,
            _ => CompressorSpec::TopK { k: self.k_uplink },
        }
    }

    fn downlink(&self) -> Option<CompressorSpec> {
        (self.mode == Mode::Bidirectional).then_some(CompressorSpec::TopK { k: self.k_downlink })
    }
}

/// Distances from `Σ a^q` to its compressed forms at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    /// `‖Σ a − Σ Top_K(a)‖`.
    pub unidirectional: f64,
    /// `‖Σ a − Top_K(Σ Top_K(a))‖`.
    pub bidirectional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: Mode,
    /// One record per step `t = 1..=T`.
    pub records: Vec<StepRecord>,
    /// `F(w_0)`.
    pub initial_loss: f64,
    pub final_model: DenseVector,
    pub steps_per_epoch: Option<usize>,
    /// Accuracy after each completed epoch, for classifiers.
    pub epoch_accuracy: Vec<f64>,
    /// `‖∇F(w_t)‖²` for `t = 0..=T`, when tracked.
    pub full_grad_norm_sq: Option<Vec<f64>>,
    /// `‖w̃_t‖` for `t = 0..=T`, the scale for judging `lemma1_residual`.
    pub tilde_norms: Vec<f64>,
    pub snapshot: Option<Snapshot>,
    pub wall_clock_secs: f64,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }
}

fn at_step<T>(t: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(what) => Error::Divergence {
            step: t,
            what: what.to_string(),
        },
        other => other,
    })
}

fn finite(t: usize, x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Divergence {
            step: t,
            what: format!("{what} is {x}"),
        })
    }
}

/// Runs `cfg.steps` iterations from `init`, worker `q` sampling from
/// `rng::worker_stream(seed, q)`.
///
/// Gradients may be evaluated on `cfg.threads` threads; all state updates
/// and reductions run in ascending worker order, so the log is identical
/// for any thread count.
pub fn run_training(oracle: &dyn GradientOracle, cfg: &ProtocolConfig, init: DenseVector, seed: u64) -> Result<TrainingLog> {
    let started = Instant::now();
    let d = oracle.dim();
    if init.dim() != d {
        return Err(Error::invalid(format!("initial model has dimension {}, problem has {d}", init.dim())));
    }
    cfg.validate(d)?;
    let weights = oracle.weights().to_vec();
    let n = weights.len();
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidState(format!("cannot start thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut workers = (0..n)
        .map(|q| WorkerState::new(q, init.clone(), cfg.uplink(), rng::worker_stream(seed, q)))
        .collect::<Result<Vec<_>>>()?;
    let mut server = ServerState::new(d, weights.clone(), cfg.downlink())?;
    let k_up = if cfg.mode == Mode::Vanilla { d } else { cfg.k_uplink };

    let mut w = init;
    let initial_loss = finite(0, at_step(0, oracle.global_loss(&w))?, "initial loss")?;
    let mut full_grads = cfg
        .track_full_gradient
        .then(|| oracle.full_gradient(&w).map(|g| vec![g.norm_sq()]))
        .transpose()?;
    let steps_per_epoch = oracle.steps_per_epoch();
    let mut epoch_accuracy = Vec::new();
    let mut snapshot = None;
    let mut records = Vec::with_capacity(cfg.steps);
    let mut tilde_prev = w.clone();
    let mut tilde_norms = vec![w.norm()];
    let mut gap_prev = 0.0;

    for t in 1..=cfg.steps {
        let alpha = cfg.schedule.step_size(t - 1);
        let step_all = |ws: &mut WorkerState| ws.step(oracle, alpha);
        let results: Vec<Result<WorkerStep>> = match &pool {
            Some(pool) => pool.install(|| workers.par_iter_mut().map(step_all).collect()),
            None => workers.iter_mut().map(step_all).collect(),
        };
        let steps = at_step(t, results.into_iter().collect::<Result<Vec<_>>>())?;

        let delta_prev = server.delta().clone();
        let msgs: Vec<_> = steps.iter().map(|s| s.msg.clone()).collect();
        let out = at_step(t, server.step(&msgs))?;

        at_step(t, w.axpy_assign(-1.0, &out.update))?;
        for ws in &mut workers {
            at_step(t, ws.apply(&out.update))?;
            if ws.model() != &w {
                return Err(Error::InvalidState(format!(
                    "replica of worker {} differs from the canonical model at step {t}",
                    ws.index()
                )));
            }
        }

        let sum_g = at_step(t, weighted_sum(&weights.iter().copied().zip(steps.iter().map(|s| &s.g)).collect::<Vec<_>>()))?;
        let grad_norm_sq = finite(t, sum_g.norm_sq(), "aggregated gradient norm")?;
        let mean_update = at_step(t, sum_g.scaled(alpha))?;
        let mu_norm = mean_update.norm();

        let memory = at_step(t, memory_total(&workers, &server))?;
        let tilde = at_step(t, w.sub(&memory))?;
        let gap_norm = memory.norm();
        let residual = lemma1_residual(&tilde, &tilde_prev, &mean_update)?;
        let tilde_step = tilde.distance(&tilde_prev)?;

        let sum_a = at_step(t, weighted_sum(&weights.iter().copied().zip(steps.iter().map(|s| &s.a)).collect::<Vec<_>>()))?;
        let uni = split_from_parts(&sum_a, k_up, &out.aggregate)?;
        let bi = match cfg.mode {
            Mode::Bidirectional => {
                let s = at_step(t, delta_prev.add(&sum_a))?;
                Some(split_from_parts(&s, cfg.k_downlink, &out.update)?)
            }
            _ => None,
        };
        let split = bi.unwrap_or(uni);
        let rho_t = if mu_norm > 0.0 { split.distributed / mu_norm } else { 0.0 };
        let slack = gap_inequality_check(gap_norm, gap_prev, tilde_step, split.one_minus_gamma(), rho_t);

        let loss = finite(t, at_step(t, oracle.global_loss(&w))?, "loss")?;
        let one_minus_gamma_uplink_max = steps.iter().filter_map(|s| s.one_minus_gamma).reduce(f64::max);

        records.push(StepRecord {
            t,
            loss,
            grad_norm_sq,
            rho: bi.and_then(|b| ratio(b.distributed, mu_norm)),
            rho_hat: (cfg.mode != Mode::Vanilla)
                .then(|| ratio(uni.distributed, mu_norm))
                .flatten(),
            one_minus_gamma_uplink_max,
            one_minus_gamma_downlink: out.one_minus_gamma_downlink,
            nonzero_fraction: out.aggregate.nnz() as f64 / d as f64,
            lemma1_residual: residual,
            gap_norm,
            gap_inequality_slack: slack,
            inherent_error: split.inherent,
            distributed_error: split.distributed,
        });

        if cfg.snapshot_step == Some(t) {
            let a_list: Vec<DenseVector> = steps.iter().map(|s| s.a.clone()).collect();
            let (u, b) = snapshot_distances(&a_list, k_up)?;
            snapshot = Some(Snapshot {
                t,
                unidirectional: u,
                bidirectional: b,
            });
        }
        if let Some(full) = full_grads.as_mut() {
            full.push(at_step(t, oracle.full_gradient(&w))?.norm_sq());
        }
        if let Some(spe) = steps_per_epoch {
            if t % spe == 0 {
                if let Some(acc) = oracle.accuracy(&w) {
                    epoch_accuracy.push(acc);
                }
            }
        }
        tilde_norms.push(tilde.norm());
        tilde_prev = tilde;
        gap_prev = gap_norm;
    }

    Ok(TrainingLog {
        mode: cfg.mode,
        records,
        initial_loss,
        final_model: w,
        steps_per_epoch,
        epoch_accuracy,
        full_grad_norm_sq: full_grads,
        tilde_norms,
        snapshot,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
