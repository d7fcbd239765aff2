use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, DenseVector};
use crate::rng::SimRng;

use super::{check_worker, uniform_weights, Dataset, GradientOracle, Partition};

/// `Σ_l (fan_in·fan_out + fan_out)` for consecutive layer sizes.
pub fn mlp_param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// Fully connected classifier with ReLU hidden layers and a
/// softmax cross-entropy output.
///
/// Parameters are packed layer by layer: the `fan_out × fan_in` weight
/// matrix in row-major order, then the `fan_out` biases.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    layers: Vec<usize>,
    data: Arc<Dataset>,
    partition: Partition,
    weights: Vec<f64>,
    batch: usize,
}

impl MlpProblem {
    pub fn new(layers: Vec<usize>, data: Arc<Dataset>, partition: Partition, batch: usize) -> Result<Self> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::invalid("an MLP needs at least two non-empty layers"));
        }
        if layers[0] != data.num_features() {
            return Err(Error::invalid(format!(
                "input layer has {} units but the dataset has {} features",
                layers[0],
                data.num_features()
            )));
        }
        let out = *layers.last().unwrap();
        if out < data.num_classes() {
            return Err(Error::invalid(format!(
                "output layer has {out} units but the dataset has {} classes",
                data.num_classes()
            )));
        }
        if batch == 0 {
            return Err(Error::invalid("minibatch size must be >= 1"));
        }
        let weights = uniform_weights(partition.num_shards());
        Ok(MlpProblem {
            layers,
            data,
            partition,
            weights,
            batch,
        })
    }

    /// Replaces the default uniform aggregation weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        super::validate_weights(&weights)?;
        if weights.len() != self.partition.num_shards() {
            return Err(Error::invalid(format!(
                "{} weights for {} workers",
                weights.len(),
                self.partition.num_shards()
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init_params(&self, rng: &mut SimRng) -> DenseVector {
        let mut w = Vec::with_capacity(mlp_param_count(&self.layers));
        for pair in self.layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            w.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            w.extend(std::iter::repeat_n(0.0, fan_out));
        }
        DenseVector::new(w).expect("bounded init is finite and non-empty")
    }

    /// Mean cross-entropy over `batch` (dataset row indices) and its exact gradient.
    pub fn loss_grad(&self, w: &DenseVector, batch: &[usize]) -> Result<(f64, DenseVector)> {
        self.check_params(w)?;
        self.check_rows(batch)?;
        let mut grad = vec![0.0; w.dim()];
        let mut scratch = Scratch::new(&self.layers);
        let mut loss = 0.0;
        for &i in batch {
            loss += self.sample(w.as_slice(), i, &mut scratch, Some(&mut grad));
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let grad = DenseVector::new(grad).map_err(|_| Error::NonFinite("MLP gradient"))?;
        Ok((loss * inv, grad))
    }

    /// Mean cross-entropy over `rows`, forward pass only.
    pub fn loss(&self, w: &DenseVector, rows: &[usize]) -> Result<f64> {
        self.check_params(w)?;
        self.check_rows(rows)?;
        let mut scratch = Scratch::new(&self.layers);
        let total: f64 = rows.iter().map(|&i| self.sample(w.as_slice(), i, &mut scratch, None)).sum();
        Ok(total / rows.len() as f64)
    }

    fn check_params(&self, w: &DenseVector) -> Result<()> {
        let expected = mlp_param_count(&self.layers);
        if w.dim() != expected {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, the network needs {expected}",
                w.dim()
            )));
        }
        Ok(())
    }

    fn check_rows(&self, rows: &[usize]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::invalid(format!("row {bad} out of range for {} samples", self.data.len())));
        }
        Ok(())
    }

    /// Forward pass on one sample, returning its loss. When `grad` is given,
    /// backpropagates and accumulates the (unscaled) gradient into it.
    fn sample(&self, w: &[f64], row: usize, s: &mut Scratch, grad: Option<&mut [f64]>) -> f64 {
        let n_layers = self.layers.len() - 1;
        s.acts[0].copy_from_slice(self.data.row(row));
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let (wm, rest) = w[offset..].split_at(fan_in * fan_out);
            let bias = &rest[..fan_out];
            let (prev, next) = s.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for (o, (row_w, b)) in out.iter_mut().zip(wm.chunks_exact(fan_in).zip(bias)) {
                let z = b + row_w.iter().zip(input.iter()).map(|(a, x)| a * x).sum::<f64>();
                *o = if l + 1 < n_layers { z.max(0.0) } else { z };
            }
            offset += fan_in * fan_out + fan_out;
        }

        let logits = &s.acts[n_layers];
        let label = self.data.label(row);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let loss = log_z - logits[label];

        let Some(grad) = grad else { return loss };

        // Output delta: softmax − onehot.
        let delta = &mut s.deltas[n_layers];
        for (d, z) in delta.iter_mut().zip(logits.iter()) {
            *d = (z - log_z).exp();
        }
        delta[label] -= 1.0;

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let input = &s.acts[l];
            let (lower, upper) = s.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            for ((g_row, gbj), &dj) in gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(delta.iter()) {
                *gbj += dj;
                if dj != 0.0 {
                    for (g, x) in g_row.iter_mut().zip(input.iter()) {
                        *g += dj * x;
                    }
                }
            }
            if l > 0 {
                let wm = &w[offset..offset + fan_in * fan_out];
                let below = &mut lower[l];
                below.iter_mut().for_each(|b| *b = 0.0);
                for (row_w, &dj) in wm.chunks_exact(fan_in).zip(delta.iter()) {
                    if dj != 0.0 {
                        for (b, a) in below.iter_mut().zip(row_w) {
                            *b += dj * a;
                        }
                    }
                }
                // ReLU derivative: the stored activation is zero where the unit was off.
                for (b, &h) in below.iter_mut().zip(input.iter()) {
                    if h <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
        }
        loss
    }
}

struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(layers: &[usize]) -> Self {
        Scratch {
            acts: layers.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: layers.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

impl GradientOracle for MlpProblem {
    fn dim(&self) -> usize {
        mlp_param_count(&self.layers)
    }

    fn num_workers(&self) -> usize {
        self.partition.num_shards()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn stochastic_gradient(&self, q: usize, w: &DenseVector, rng: &mut SimRng) -> Result<DenseVector> {
        check_worker(q, self.num_workers())?;
        let shard = self.partition.shard(q);
        if shard.is_empty() {
            return Err(Error::InvalidState(format!("worker {q} has an empty shard")));
        }
        if self.batch > shard.len() {
            return Err(Error::InvalidState(format!(
                "minibatch size {} exceeds worker {q}'s shard of {}",
                self.batch,
                shard.len()
            )));
        }
        let mut picks = index::sample(rng, shard.len(), self.batch).into_vec();
        picks.sort_unstable();
        let rows: Vec<usize> = picks.into_iter().map(|j| shard[j]).collect();
        Ok(self.loss_grad(w, &rows)?.1)
    }

    fn global_loss(&self, w: &DenseVector) -> Result<f64> {
        let mut total = 0.0;
        for q in 0..self.num_workers() {
            total += self.weights[q] * self.loss(w, self.partition.shard(q))?;
        }
        Ok(total)
    }

    fn full_gradient(&self, w: &DenseVector) -> Result<DenseVector> {
        let mut total = DenseVector::zeros(self.dim());
        for q in 0..self.num_workers() {
            let (_, g) = self.loss_grad(w, self.partition.shard(q))?;
            total.axpy_assign(self.weights[q], &g)?;
        }
        Ok(total)
    }

    fn steps_per_epoch(&self) -> Option<usize> {
        let smallest = (0..self.num_workers()).map(|q| self.partition.shard(q).len()).min()?;
        Some(smallest.div_ceil(self.batch).max(1))
    }

    fn accuracy(&self, w: &DenseVector) -> Option<f64> {
        check_dims(w.dim(), self.dim()).ok()?;
        let n_layers = self.layers.len() - 1;
        let mut s = Scratch::new(&self.layers);
        let correct = (0..self.data.len())
            .filter(|&i| {
                self.sample(w.as_slice(), i, &mut s, None);
                let logits = &s.acts[n_layers];
                let best = logits
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, &z)| if z > logits[best] { j } else { best });
                best == self.data.label(i)
            })
            .count();
        Some(correct as f64 / self.data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::partition;
    use crate::rng;

    fn problem(layers: Vec<usize>, classes: usize) -> MlpProblem {
        let data = Dataset::synthetic(40, layers[0], classes, 1.0, &mut rng::stream(1, rng::STREAM_DATA)).unwrap();
        let part = partition(data.len(), 4, &mut rng::stream(1, rng::STREAM_PARTITION)).unwrap();
        MlpProblem::new(layers, Arc::new(data), part, 5).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(mlp_param_count(&[784, 64, 10]), 50890);
        assert_eq!(mlp_param_count(&[64, 32, 10]), 2410);
    }

    #[test]
    fn zero_output_layer_gives_ln_classes() {
        let p = problem(vec![6, 5, 10], 10);
        let mut w = p.init_params(&mut rng::stream(2, rng::STREAM_INIT)).into_vec();
        let last = 6 * 5 + 5;
        w[last..].iter_mut().for_each(|x| *x = 0.0);
        let w = DenseVector::new(w).unwrap();
        let (loss, _) = p.loss_grad(&w, &[0, 1, 2]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = problem(vec![8, 7, 6, 4], 4);
        let w = p.init_params(&mut rng::stream(3, rng::STREAM_INIT));
        let batch: Vec<usize> = (0..12).collect();
        let (_, g) = p.loss_grad(&w, &batch).unwrap();
        let h = 1e-5;
        let mut r = rng::stream(3, rng::STREAM_VERIFY);
        for _ in 0..50 {
            let i = r.random_range(0..w.dim());
            let mut plus = w.clone().into_vec();
            plus[i] += h;
            let mut minus = w.clone().into_vec();
            minus[i] -= h;
            let lp = p.loss(&DenseVector::new(plus).unwrap(), &batch).unwrap();
            let lm = p.loss(&DenseVector::new(minus).unwrap(), &batch).unwrap();
            assert!(((lp - lm) / (2.0 * h) - g[i]).abs() <= 1e-5, "coordinate {i}");
        }
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let p = problem(vec![5, 4, 3], 3);
        let w = p.init_params(&mut rng::stream(4, rng::STREAM_INIT));
        let (l1, g1) = p.loss_grad(&w, &[3, 7, 11]).unwrap();
        let (l2, g2) = p.loss_grad(&w, &[3, 3, 7, 7, 11, 11]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!(g1.distance(&g2).unwrap() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let p = problem(vec![5, 4, 3], 3);
        assert!(matches!(
            p.loss_grad(&DenseVector::zeros(3), &[0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn init_is_bounded_with_zero_biases() {
        let p = problem(vec![16, 4, 3], 3);
        let w = p.init_params(&mut rng::stream(5, rng::STREAM_INIT));
        assert!(w.as_slice()[..64].iter().all(|x| x.abs() <= 0.25));
        assert!(w.as_slice()[64..68].iter().all(|&x| x == 0.0));
        assert!(w.as_slice()[68..80].iter().all(|x| x.abs() <= 0.5));
        assert!(w.as_slice()[80..].iter().all(|&x| x == 0.0));
    }
}
