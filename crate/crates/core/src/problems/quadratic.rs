use crate::error::{Error, Result};
use crate::linalg::{check_dims, weighted_sum, DenseVector};
use crate::rng::SimRng;

use super::{check_worker, uniform_weights, validate_weights, GradientOracle};

/// `F^q(w) = ½ (w − c_q)ᵀ(w − c_q)`, one centre per worker.
///
/// The gradient is exact, so there is no sampling noise, and `∇F` is
/// 1-Lipschitz for any centres and weights.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    centers: Vec<DenseVector>,
    weights: Vec<f64>,
}

impl QuadraticProblem {
    pub const LIPSCHITZ: f64 = 1.0;

    pub fn new(centers: Vec<DenseVector>, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        if centers.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} centres but {} weights",
                centers.len(),
                weights.len()
            )));
        }
        let d = centers[0].dim();
        for c in &centers {
            check_dims(c.dim(), d)?;
        }
        Ok(QuadraticProblem { centers, weights })
    }

    /// Constant-valued centres (`c_q = value_q · 1⃗`) with uniform weights.
    pub fn constant_centers(dim: usize, values: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be > 0"));
        }
        let centers = values.iter().map(|&v| DenseVector::filled(dim, v)).collect();
        QuadraticProblem::new(centers, uniform_weights(values.len()))
    }

    /// Three workers in R^100 with centres 1⃗, 5⃗ and 10⃗, equally weighted.
    pub fn toy() -> Self {
        QuadraticProblem::constant_centers(100, &[1.0, 5.0, 10.0]).expect("toy problem is valid")
    }

    pub fn centers(&self) -> &[DenseVector] {
        &self.centers
    }

    /// `∇F^q(w) = w − c_q`.
    pub fn gradient(&self, q: usize, w: &DenseVector) -> Result<DenseVector> {
        check_worker(q, self.centers.len())?;
        w.sub(&self.centers[q])
    }

    pub fn worker_loss(&self, q: usize, w: &DenseVector) -> Result<f64> {
        check_worker(q, self.centers.len())?;
        Ok(0.5 * w.distance(&self.centers[q])?.powi(2))
    }

    /// `w* = Σ p_q c_q` and `F(w*)`.
    pub fn optimum(&self) -> (DenseVector, f64) {
        let terms: Vec<(f64, &DenseVector)> = self.weights.iter().copied().zip(&self.centers).collect();
        let w_star = weighted_sum(&terms).expect("centres share one dimension");
        let f_star = self.loss(&w_star);
        (w_star, f_star)
    }

    fn loss(&self, w: &DenseVector) -> f64 {
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(p, c)| {
                let sq: f64 = w.as_slice().iter().zip(c.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
                p * 0.5 * sq
            })
            .sum()
    }
}

impl GradientOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    fn num_workers(&self) -> usize {
        self.centers.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn stochastic_gradient(&self, q: usize, w: &DenseVector, _rng: &mut SimRng) -> Result<DenseVector> {
        self.gradient(q, w)
    }

    fn global_loss(&self, w: &DenseVector) -> Result<f64> {
        check_dims(w.dim(), self.dim())?;
        Ok(self.loss(w))
    }

    fn full_gradient(&self, w: &DenseVector) -> Result<DenseVector> {
        let grads = (0..self.centers.len())
            .map(|q| self.gradient(q, w))
            .collect::<Result<Vec<_>>>()?;
        let terms: Vec<(f64, &DenseVector)> = self.weights.iter().copied().zip(&grads).collect();
        weighted_sum(&terms)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn optimum(&self) -> Option<(DenseVector, f64)> {
        Some(QuadraticProblem::optimum(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn toy_gradients() {
        let p = QuadraticProblem::toy();
        assert!(p.gradient(0, &DenseVector::filled(100, 1.0)).unwrap().is_zero());
        assert_eq!(p.gradient(2, &DenseVector::zeros(100)).unwrap(), DenseVector::filled(100, -10.0));
        assert!(p.gradient(1, &DenseVector::filled(100, 5.0)).unwrap().is_zero());
        assert!(matches!(p.gradient(3, &DenseVector::zeros(100)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn toy_optimum() {
        let (w, f) = QuadraticProblem::toy().optimum();
        for &x in w.as_slice() {
            assert!((x - 16.0 / 3.0).abs() <= 1e-12 * 16.0 / 3.0);
        }
        assert!((f - 6100.0 / 9.0).abs() <= 1e-12 * 6100.0 / 9.0);
    }

    #[test]
    fn one_dimensional_optimum() {
        // Per coordinate: (1/3)·½·((16/3−1)² + (16/3−5)² + (16/3−10)²) = 61/9.
        let (w, f) = QuadraticProblem::constant_centers(1, &[1.0, 5.0, 10.0]).unwrap().optimum();
        assert!((w[0] - 16.0 / 3.0).abs() < 1e-14);
        assert!((f - 61.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn single_center_optimum_is_zero() {
        let c = DenseVector::new(vec![1.5, -2.0, 0.25]).unwrap();
        let p = QuadraticProblem::new(vec![c.clone()], vec![1.0]).unwrap();
        let (w, f) = p.optimum();
        assert_eq!(w, c);
        assert_eq!(f, 0.0);
        assert_eq!(p.global_loss(&c).unwrap(), 0.0);
    }

    #[test]
    fn toy_loss_at_worker_one_optimum() {
        // (1/3)·(0 + ½·100·16 + ½·100·81) = 4850/3
        let p = QuadraticProblem::toy();
        let f = p.global_loss(&DenseVector::filled(100, 1.0)).unwrap();
        assert!((f - 4850.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_is_one_lipschitz() {
        let p = QuadraticProblem::toy();
        let mut rng = crate::rng::stream(3, crate::rng::STREAM_VERIFY);
        for _ in 0..20 {
            let u = DenseVector::new((0..100).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap();
            let v = DenseVector::new((0..100).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap();
            let gu = p.full_gradient(&u).unwrap();
            let gv = p.full_gradient(&v).unwrap();
            let lhs = gu.distance(&gv).unwrap();
            let rhs = QuadraticProblem::LIPSCHITZ * u.distance(&v).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * rhs);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let c = vec![DenseVector::zeros(2), DenseVector::zeros(2)];
        assert!(QuadraticProblem::new(c.clone(), vec![0.5, 0.6]).is_err());
        assert!(QuadraticProblem::new(c.clone(), vec![1.0, 0.0]).is_err());
        assert!(QuadraticProblem::new(c, vec![1.0]).is_err());
    }
}
