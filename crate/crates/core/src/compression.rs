//! Top-K and identity compressors with residual bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{top_k_select, DenseVector, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressorSpec {
    TopK { k: usize },
    Identity,
}

impl CompressorSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            CompressorSpec::TopK { k } if k < 1 || k > dim => Err(Error::invalid(format!(
                "top-K compressor needs 1 <= K <= d, got K={k}, d={dim}"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of coordinates kept at most; `dim` for the identity.
    pub fn budget(&self, dim: usize) -> usize {
        match *self {
            CompressorSpec::TopK { k } => k,
            CompressorSpec::Identity => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionOutcome {
    pub kept: SparseVector,
    pub residual: DenseVector,
    /// `‖residual‖² / ‖input‖²`, absent for a zero input.
    pub measured_one_minus_gamma: Option<f64>,
}

pub fn compress(spec: CompressorSpec, v: &DenseVector) -> Result<CompressionOutcome> {
    let kept = match spec {
        CompressorSpec::TopK { k } => top_k_select(v, k)?,
        CompressorSpec::Identity => SparseVector::from_dense(v),
    };
    // Copy-and-zero rather than subtract: bit-identical, and `kept + residual`
    // reproduces the input exactly.
    let mut residual = v.clone().into_vec();
    for &i in kept.indices() {
        residual[i] = 0.0;
    }
    let residual = DenseVector::from_vec_unchecked(residual);
    let input_sq = v.norm_sq();
    let measured_one_minus_gamma = (input_sq > 0.0).then(|| residual.norm_sq() / input_sq);
    Ok(CompressionOutcome {
        kept,
        residual,
        measured_one_minus_gamma,
    })
}

/// Worst-case `1 − γ` for top-K on `d` coordinates: `(d − K)/d`.
pub fn gamma_floor(d: usize, k: usize) -> Result<f64> {
    if d == 0 || k < 1 || k > d {
        return Err(Error::invalid(format!("gamma_floor needs 1 <= K <= d, got K={k}, d={d}")));
    }
    Ok((d - k) as f64 / d as f64)
}

/// `K = d − ⌊(1 − fraction)·d⌋`, clamped to at least 1.
pub fn k_from_sparsity(d: usize, fraction: f64) -> Result<usize> {
    if d == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sparsity fraction must be in (0, 1], got {fraction}")));
    }
    let dropped = ((1.0 - fraction) * d as f64).floor() as usize;
    Ok((d - dropped.min(d)).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn all_equal_magnitudes_hit_the_floor() {
        let out = compress(CompressorSpec::TopK { k: 1 }, &dv(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert_eq!(out.measured_one_minus_gamma, Some(0.75));
        assert_eq!(gamma_floor(4, 1).unwrap(), 0.75);
    }

    #[test]
    fn already_sparse_input_is_lossless() {
        let out = compress(CompressorSpec::TopK { k: 1 }, &dv(&[10.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(out.residual.is_zero());
        assert_eq!(out.measured_one_minus_gamma, Some(0.0));
    }

    #[test]
    fn zero_input_has_no_gamma() {
        let out = compress(CompressorSpec::TopK { k: 1 }, &DenseVector::zeros(4)).unwrap();
        assert!(out.kept.is_empty());
        assert!(out.residual.is_zero());
        assert_eq!(out.measured_one_minus_gamma, None);
    }

    #[test]
    fn identity_keeps_everything() {
        let v = dv(&[0.0, -3.5, 2.0]);
        let out = compress(CompressorSpec::Identity, &v).unwrap();
        assert_eq!(out.kept.densify(), v);
        assert!(out.residual.is_zero());
        assert_eq!(out.measured_one_minus_gamma, Some(0.0));
    }

    #[test]
    fn gamma_floor_values() {
        assert_eq!(gamma_floor(7, 7).unwrap(), 0.0);
        assert!((gamma_floor(50890, 51).unwrap() - 0.998998).abs() < 5e-7);
        assert_eq!(gamma_floor(50890, 51).unwrap(), 50839.0 / 50890.0);
        assert!(gamma_floor(4, 0).is_err());
        assert!(gamma_floor(4, 5).is_err());
    }

    #[test]
    fn k_from_sparsity_values() {
        // 0.999 * 50890 = 50839.11 -> floor 50839 -> K = 51
        assert_eq!(k_from_sparsity(50890, 0.001).unwrap(), 51);
        // 0.999 * 100 = 99.9 -> floor 99 -> K = 1
        assert_eq!(k_from_sparsity(100, 0.001).unwrap(), 1);
        assert_eq!(k_from_sparsity(37, 1.0).unwrap(), 37);
        assert_eq!(k_from_sparsity(10, 1e-9).unwrap(), 1);
        assert!(k_from_sparsity(10, 0.0).is_err());
        assert!(k_from_sparsity(10, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn measured_gamma_within_floor(
            v in prop::collection::vec(-1e3f64..1e3, 1..80),
            kf in 0.0f64..1.0,
        ) {
            let v = DenseVector::new(v).unwrap();
            let d = v.dim();
            let k = 1 + ((d - 1) as f64 * kf) as usize;
            let out = compress(CompressorSpec::TopK { k }, &v).unwrap();
            prop_assert!(out.kept.nnz() <= k);
            prop_assert_eq!(out.kept.densify().add(&out.residual).unwrap(), v.clone());
            if let Some(g) = out.measured_one_minus_gamma {
                prop_assert!(g >= 0.0);
                prop_assert!(g <= gamma_floor(d, k).unwrap() + 1e-12);
            }
        }
    }
}
