//! Per-step measurements of the quantities in the convergence analysis.

mod bounds;
mod comm;

pub use bounds::{bound_d, bound_rhs, theorem_check, BoundConstants, BoundReport};
pub use comm::{comm_time, CommParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, sparse_accumulate, top_k_select, weighted_sum, DenseVector, SparseVector, VectorOperand};

/// `ρ` and `ρ̂` are reported as absent when `‖α Σ p_q g^q‖` is below this.
pub const RHO_DENOMINATOR_TOL: f64 = 1e-12;

/// Column order of `metrics.csv`.
pub const CSV_COLUMNS: [&str; 13] = [
    "t",
    "loss",
    "grad_norm_sq",
    "rho",
    "rho_hat",
    "one_minus_gamma_uplink_max",
    "one_minus_gamma_downlink",
    "nonzero_fraction",
    "lemma1_residual",
    "gap_norm",
    "gap_inequality_slack",
    "inherent_error",
    "distributed_error",
];

/// Everything measured at step `t` (1-based; the state after `t` updates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// `F(w_t)`.
    pub loss: f64,
    /// `‖Σ p_q g^q(w_{t−1})‖²`.
    pub grad_norm_sq: f64,
    pub rho: Option<f64>,
    pub rho_hat: Option<f64>,
    pub one_minus_gamma_uplink_max: Option<f64>,
    pub one_minus_gamma_downlink: Option<f64>,
    /// Non-zeros in `Σ p_q Top_K(a_t^q)` over `d`.
    pub nonzero_fraction: f64,
    pub lemma1_residual: f64,
    /// `‖w_t − w̃_t‖`.
    pub gap_norm: f64,
    pub gap_inequality_slack: f64,
    pub inherent_error: f64,
    pub distributed_error: f64,
}

impl StepRecord {
    /// Fields in [`CSV_COLUMNS`] order; absent values are empty strings.
    /// Floats use the shortest representation that round-trips.
    pub fn csv_fields(&self) -> [String; 13] {
        fn num(x: f64) -> String {
            format!("{x:?}")
        }
        fn opt(x: Option<f64>) -> String {
            x.map(num).unwrap_or_default()
        }
        [
            self.t.to_string(),
            num(self.loss),
            num(self.grad_norm_sq),
            opt(self.rho),
            opt(self.rho_hat),
            opt(self.one_minus_gamma_uplink_max),
            opt(self.one_minus_gamma_downlink),
            num(self.nonzero_fraction),
            num(self.lemma1_residual),
            num(self.gap_norm),
            num(self.gap_inequality_slack),
            num(self.inherent_error),
            num(self.distributed_error),
        ]
    }
}

/// `‖Top_K(Σ p_q a^q) − Σ_q Top_K(p_q a^q)‖ / ‖mean_update‖`.
pub fn measure_rho_hat(
    a_list: &[DenseVector],
    weights: &[f64],
    mean_update: &DenseVector,
    k: usize,
) -> Result<Option<f64>> {
    let split = error_split(a_list, weights, None, k, k)?;
    Ok(ratio(split.distributed, mean_update.norm()))
}

/// `‖Top_K(δ + Σ p_q a^q) − Top_K(δ + Σ_q Top_K(p_q a^q))‖ / ‖mean_update‖`,
/// with `k_up` for the per-worker operators and `k_down` for the outer ones.
pub fn measure_rho(
    delta_prev: &DenseVector,
    a_list: &[DenseVector],
    weights: &[f64],
    mean_update: &DenseVector,
    k_up: usize,
    k_down: usize,
) -> Result<Option<f64>> {
    let split = error_split(a_list, weights, Some(delta_prev), k_up, k_down)?;
    Ok(ratio(split.distributed, mean_update.norm()))
}

pub(crate) fn ratio(numerator: f64, denominator: f64) -> Option<f64> {
    (denominator >= RHO_DENOMINATOR_TOL).then(|| numerator / denominator)
}

pub fn nonzero_fraction(aggregate: &SparseVector) -> f64 {
    aggregate.nnz() as f64 / aggregate.dim() as f64
}

/// `‖w̃_t − (w̃_{t−1} − mean_update)‖`.
pub fn lemma1_residual(wt_tilde: &DenseVector, wt_tilde_prev: &DenseVector, mean_update: &DenseVector) -> Result<f64> {
    check_dims(wt_tilde.dim(), wt_tilde_prev.dim())?;
    check_dims(mean_update.dim(), wt_tilde.dim())?;
    let sq: f64 = wt_tilde
        .as_slice()
        .iter()
        .zip(wt_tilde_prev.as_slice())
        .zip(mean_update.as_slice())
        .map(|((a, b), u)| {
            let r = a - (b - u);
            r * r
        })
        .sum();
    Ok(sq.sqrt())
}

/// Slack in `gap_t ≤ √(1−γ_t)·gap_prev + (√(1−γ_t) + ρ_t)·tilde_step`.
/// Non-negative (up to rounding) whenever the inequality holds.
pub fn gap_inequality_check(gap_t: f64, gap_prev: f64, tilde_step: f64, one_minus_gamma_t: f64, rho_t: f64) -> f64 {
    let c = one_minus_gamma_t.max(0.0).sqrt();
    c * gap_prev + (c + rho_t) * tilde_step - gap_t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSplit {
    /// `‖s − Top_K(s)‖`: what compressing the exact aggregate loses.
    pub inherent: f64,
    /// Extra distance caused by compressing each worker before aggregating.
    pub distributed: f64,
    /// `‖s‖`, kept so the per-step contraction `1 − γ_t` can be recovered.
    pub s_norm: f64,
}

impl ErrorSplit {
    /// `‖s − Top_K(s)‖² / ‖s‖²`, zero when `s = 0`.
    pub fn one_minus_gamma(&self) -> f64 {
        if self.s_norm > 0.0 {
            (self.inherent / self.s_norm).powi(2)
        } else {
            0.0
        }
    }
}

/// Splits the compression error of one step.
///
/// With `s = δ_prev + Σ p_q a^q`, `inherent = ‖s − Top_K(s)‖`. The
/// distributed part compares `Top_K(s)` against what the protocol actually
/// produces from per-worker messages: `Σ_q Top_K(p_q a^q)` without `δ_prev`,
/// and `Top_K(δ_prev + Σ_q Top_K(p_q a^q))` with it. `k_up` is used
/// for the per-worker operators, `k_down` for the outer ones when `δ_prev`
/// is given and `k_up` otherwise.
pub fn error_split(
    a_list: &[DenseVector],
    weights: &[f64],
    delta_prev: Option<&DenseVector>,
    k_up: usize,
    k_down: usize,
) -> Result<ErrorSplit> {
    if a_list.len() != weights.len() || a_list.is_empty() {
        return Err(Error::invalid(format!("{} vectors but {} weights", a_list.len(), weights.len())));
    }
    let msgs = a_list
        .iter()
        .zip(weights)
        .map(|(a, &p)| top_k_select(&a.scaled(p)?, k_up))
        .collect::<Result<Vec<_>>>()?;
    let agg = sparse_accumulate(&msgs.iter().map(|m| (1.0, m)).collect::<Vec<_>>())?;
    let sum_a = weighted_sum(&a_list.iter().zip(weights).map(|(a, &p)| (p, a)).collect::<Vec<_>>())?;
    match delta_prev {
        None => split_from_parts(&sum_a, k_up, &agg),
        Some(delta) => {
            check_dims(delta.dim(), sum_a.dim())?;
            let s = delta.add(&sum_a)?;
            let g = delta.add(&agg.densify())?;
            let down = top_k_select(&g, k_down)?;
            split_from_parts(&s, k_down, &down)
        }
    }
}

/// Shared core of [`error_split`]: `compressed` is the vector the protocol
/// produced in place of `Top_K(s)`.
pub(crate) fn split_from_parts<V: VectorOperand>(s: &DenseVector, k: usize, compressed: &V) -> Result<ErrorSplit> {
    check_dims(compressed.dim(), s.dim())?;
    let top = top_k_select(s, k)?;
    let mut dense_top = vec![0.0; s.dim()];
    for (i, v) in top.iter() {
        dense_top[i] = v;
    }
    let inherent_sq: f64 = s
        .as_slice()
        .iter()
        .zip(&dense_top)
        .map(|(x, t)| (x - t) * (x - t))
        .sum();
    let mut diff = dense_top;
    compressed.for_each_stored(|i, v| diff[i] -= v);
    Ok(ErrorSplit {
        inherent: inherent_sq.sqrt(),
        distributed: diff.iter().map(|x| x * x).sum::<f64>().sqrt(),
        s_norm: s.norm(),
    })
}

/// Distances from the plain sum `Σ a^q` to its unidirectional and
/// bidirectional compressed counterparts: `(‖Σ a − Σ Top_K(a)‖,
/// ‖Σ a − Top_K(Σ Top_K(a))‖)`. Sums are unweighted.
pub fn snapshot_distances(a_list: &[DenseVector], k: usize) -> Result<(f64, f64)> {
    let Some(first) = a_list.first() else {
        return Err(Error::invalid("snapshot needs at least one worker"));
    };
    let d = first.dim();
    let mut sum = vec![0.0; d];
    let mut sparse_sum = vec![0.0; d];
    for a in a_list {
        check_dims(a.dim(), d)?;
        for (s, x) in sum.iter_mut().zip(a.as_slice()) {
            *s += x;
        }
        for (i, v) in top_k_select(a, k)?.iter() {
            sparse_sum[i] += v;
        }
    }
    let sparse_sum = DenseVector::new(sparse_sum)?;
    let sum = DenseVector::new(sum)?;
    let uni = sum.distance(&sparse_sum)?;
    let nested = top_k_select(&sparse_sum, k)?;
    let bi = sum.distance(&nested.densify())?;
    Ok((uni, bi))
}

/// Largest value per epoch of the ratio and contraction columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMaxima {
    /// 1-based epoch number.
    pub epoch: usize,
    pub rho: Option<f64>,
    pub rho_hat: Option<f64>,
    pub one_minus_gamma_uplink: Option<f64>,
    pub one_minus_gamma_downlink: Option<f64>,
}

/// Groups records into consecutive epochs of `steps_per_epoch` steps (the
/// last may be partial) and takes each column's maximum, skipping absent values.
pub fn per_epoch_maxima(records: &[StepRecord], steps_per_epoch: usize) -> Result<Vec<EpochMaxima>> {
    if steps_per_epoch == 0 {
        return Err(Error::invalid("steps_per_epoch must be >= 1"));
    }
    fn max_of(chunk: &[StepRecord], f: impl Fn(&StepRecord) -> Option<f64>) -> Option<f64> {
        chunk.iter().filter_map(f).reduce(f64::max)
    }
    Ok(records
        .chunks(steps_per_epoch)
        .enumerate()
        .map(|(e, chunk)| EpochMaxima {
            epoch: e + 1,
            rho: max_of(chunk, |r| r.rho),
            rho_hat: max_of(chunk, |r| r.rho_hat),
            one_minus_gamma_uplink: max_of(chunk, |r| r.one_minus_gamma_uplink_max),
            one_minus_gamma_downlink: max_of(chunk, |r| r.one_minus_gamma_downlink),
        })
        .collect())
}
