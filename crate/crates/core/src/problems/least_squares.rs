use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, dot, DenseVector};
use crate::rng::SimRng;

use super::{check_worker, uniform_weights, validate_weights, GradientOracle};

#[derive(Debug, Clone)]
struct Shard {
    rows: Vec<f64>,
    targets: Vec<f64>,
}

impl Shard {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, i: usize, d: usize) -> &[f64] {
        &self.rows[i * d..(i + 1) * d]
    }
}

/// `F^q(w) = 1/(2 n_q) Σ_i (a_iᵀw − b_i)²` over worker `q`'s rows.
///
/// Stochastic gradients average over `b` rows drawn uniformly without
/// replacement from the worker's shard.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    dim: usize,
    shards: Vec<Shard>,
    weights: Vec<f64>,
    batch: usize,
}

/// Recipe for a random least-squares instance.
///
/// Features are `N(0, 1/d)` except that the first `heavy_coords`
/// columns are scaled by `heavy_scale`. Targets are `aᵀw_true + noise·ε`
/// with `w_true ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLeastSquares {
    pub dim: usize,
    pub workers: usize,
    pub samples_per_worker: usize,
    pub batch: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub heavy_coords: usize,
    #[serde(default = "one")]
    pub heavy_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl LeastSquaresProblem {
    /// `shards[q] = (rows, targets)` with `rows` row-major `n_q × dim`.
    pub fn new(dim: usize, shards: Vec<(Vec<f64>, Vec<f64>)>, weights: Vec<f64>, batch: usize) -> Result<Self> {
        validate_weights(&weights)?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be > 0"));
        }
        if batch == 0 {
            return Err(Error::invalid("minibatch size must be >= 1"));
        }
        if shards.len() != weights.len() {
            return Err(Error::invalid(format!("{} shards but {} weights", shards.len(), weights.len())));
        }
        let shards = shards
            .into_iter()
            .map(|(rows, targets)| {
                if rows.len() != targets.len() * dim {
                    return Err(Error::invalid(format!(
                        "shard has {} feature values for {} targets in dimension {dim}",
                        rows.len(),
                        targets.len()
                    )));
                }
                if rows.iter().chain(&targets).any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("least-squares data"));
                }
                Ok(Shard { rows, targets })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LeastSquaresProblem {
            dim,
            shards,
            weights,
            batch,
        })
    }

    pub fn synthetic(spec: &SyntheticLeastSquares, rng: &mut SimRng) -> Result<Self> {
        let d = spec.dim;
        if d == 0 || spec.workers == 0 || spec.samples_per_worker == 0 {
            return Err(Error::invalid("synthetic least squares needs dim, workers and samples_per_worker >= 1"));
        }
        if spec.heavy_coords > d {
            return Err(Error::invalid("heavy_coords exceeds dim"));
        }
        let base = 1.0 / (d as f64).sqrt();
        let scales: Vec<f64> = (0..d)
            .map(|j| if j < spec.heavy_coords { base * spec.heavy_scale } else { base })
            .collect();
        let w_true: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let mut shards = Vec::with_capacity(spec.workers);
        for _ in 0..spec.workers {
            let n = spec.samples_per_worker;
            let mut rows = Vec::with_capacity(n * d);
            let mut targets = Vec::with_capacity(n);
            for _ in 0..n {
                let start = rows.len();
                rows.extend(scales.iter().map(|s| {
                    let z: f64 = StandardNormal.sample(rng);
                    s * z
                }));
                let clean: f64 = rows[start..].iter().zip(&w_true).map(|(a, w)| a * w).sum();
                let eps: f64 = StandardNormal.sample(rng);
                targets.push(clean + spec.noise * eps);
            }
            shards.push((rows, targets));
        }
        LeastSquaresProblem::new(d, shards, uniform_weights(spec.workers), spec.batch)
    }

    /// Replaces the aggregation weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        if weights.len() != self.shards.len() {
            return Err(Error::invalid(format!("{} weights for {} workers", weights.len(), self.shards.len())));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn shard_len(&self, q: usize) -> usize {
        self.shards[q].len()
    }

    /// Mean gradient over the given shard rows (duplicates allowed).
    pub fn minibatch_gradient(&self, q: usize, w: &DenseVector, rows: &[usize]) -> Result<DenseVector> {
        check_worker(q, self.shards.len())?;
        check_dims(w.dim(), self.dim)?;
        let shard = &self.shards[q];
        if rows.is_empty() {
            return Err(Error::InvalidState("empty minibatch".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= shard.len()) {
            return Err(Error::invalid(format!("row {bad} out of range for shard of {}", shard.len())));
        }
        let d = self.dim;
        let w = w.as_slice();
        let mut g = vec![0.0; d];
        for &i in rows {
            let a = shard.row(i, d);
            let r: f64 = dot(a, w) - shard.targets[i];
            for (gj, aj) in g.iter_mut().zip(a) {
                *gj += r * aj;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        g.iter_mut().for_each(|x| *x *= inv);
        DenseVector::new(g).map_err(|_| Error::NonFinite("least-squares gradient"))
    }

    /// `∇F^q(w)` over the whole shard; zero for an empty shard.
    pub fn worker_full_gradient(&self, q: usize, w: &DenseVector) -> Result<DenseVector> {
        let n = self.shards.get(q).map_or(0, Shard::len);
        if n == 0 {
            check_worker(q, self.shards.len())?;
            return Ok(DenseVector::zeros(self.dim));
        }
        let rows: Vec<usize> = (0..n).collect();
        self.minibatch_gradient(q, w, &rows)
    }

    fn worker_loss(&self, q: usize, w: &[f64]) -> f64 {
        let shard = &self.shards[q];
        if shard.len() == 0 {
            return 0.0;
        }
        let sq: f64 = (0..shard.len())
            .map(|i| {
                let r: f64 = dot(shard.row(i, self.dim), w) - shard.targets[i];
                r * r
            })
            .sum();
        sq / (2.0 * shard.len() as f64)
    }
}

impl GradientOracle for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_workers(&self) -> usize {
        self.shards.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn stochastic_gradient(&self, q: usize, w: &DenseVector, rng: &mut SimRng) -> Result<DenseVector> {
        check_worker(q, self.shards.len())?;
        let n = self.shards[q].len();
        if n == 0 {
            return Err(Error::InvalidState(format!("worker {q} has an empty shard")));
        }
        if self.batch > n {
            return Err(Error::InvalidState(format!(
                "minibatch size {} exceeds worker {q}'s shard of {n}",
                self.batch
            )));
        }
        let mut rows = index::sample(rng, n, self.batch).into_vec();
        rows.sort_unstable();
        self.minibatch_gradient(q, w, &rows)
    }

    fn global_loss(&self, w: &DenseVector) -> Result<f64> {
        check_dims(w.dim(), self.dim)?;
        Ok((0..self.shards.len())
            .map(|q| self.weights[q] * self.worker_loss(q, w.as_slice()))
            .sum())
    }

    fn full_gradient(&self, w: &DenseVector) -> Result<DenseVector> {
        let mut total = DenseVector::zeros(self.dim);
        for q in 0..self.shards.len() {
            total.axpy_assign(self.weights[q], &self.worker_full_gradient(q, w)?)?;
        }
        Ok(total)
    }

    fn steps_per_epoch(&self) -> Option<usize> {
        let smallest = self.shards.iter().map(Shard::len).min()?;
        Some(smallest.div_ceil(self.batch).max(1))
    }
}
