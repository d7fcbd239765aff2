//! Gradient oracles for the distributed objective `F(w) = Σ_q p_q F^q(w)`.
//!
//! Worker indices are 0-based throughout the crate.

mod dataset;
mod least_squares;
mod mlp;
mod quadratic;

pub use dataset::{load_csv, load_dataset, load_idx, partition, Dataset, DatasetSource, Partition};
pub use least_squares::{LeastSquaresProblem, SyntheticLeastSquares};
pub use mlp::{mlp_param_count, MlpProblem};
pub use quadratic::QuadraticProblem;

use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::rng::SimRng;

/// Source of per-worker (stochastic) gradients.
///
/// Implementations are immutable after construction. All randomness comes
/// from the caller-supplied `rng`, so evaluation is reentrant and workers
/// may be evaluated concurrently.
pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn num_workers(&self) -> usize;

    /// Aggregation weights `p_q`, positive and summing to one.
    fn weights(&self) -> &[f64];

    /// `g^q(w, ξ)`: the gradient of worker `q`'s loss on a freshly drawn
    /// minibatch (or the exact gradient for deterministic problems).
    fn stochastic_gradient(&self, q: usize, w: &DenseVector, rng: &mut SimRng) -> Result<DenseVector>;

    /// `F(w)` over the full data, no sampling.
    fn global_loss(&self, w: &DenseVector) -> Result<f64>;

    /// `∇F(w) = Σ p_q ∇F^q(w)` over the full data.
    fn full_gradient(&self, w: &DenseVector) -> Result<DenseVector>;

    /// True when `stochastic_gradient` ignores its rng.
    fn is_deterministic(&self) -> bool {
        false
    }

    /// Minibatch steps that make one pass over a worker's shard.
    fn steps_per_epoch(&self) -> Option<usize> {
        None
    }

    /// Classification accuracy of `w` over the full data, when meaningful.
    fn accuracy(&self, _w: &DenseVector) -> Option<f64> {
        None
    }

    /// Known minimiser and minimum, when available in closed form.
    fn optimum(&self) -> Option<(DenseVector, f64)> {
        None
    }
}

/// Validates aggregation weights: `N >= 1`, each positive, sum one within 1e-12.
pub fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("at least one worker is required"));
    }
    if weights.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::invalid("worker weights must be positive and finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("worker weights must sum to 1, got {total}")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_worker(q: usize, n: usize) -> Result<()> {
    if q >= n {
        return Err(Error::invalid(format!("worker index {q} out of range for {n} workers")));
    }
    Ok(())
}
