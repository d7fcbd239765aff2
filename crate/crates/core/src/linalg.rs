//! Dense and sparse `f64` vectors and exact top-K magnitude selection.
//!
//! Every reduction in this module runs in ascending index order (and, for
//! multi-term sums, in the order the terms are given), so results are
//! bit-reproducible across runs and thread counts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty vector of model coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("dense vector must have length > 0"));
        }
        if !all_finite(&values) {
            return Err(Error::NonFinite("dense vector"));
        }
        Ok(DenseVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        DenseVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert!(value.is_finite(), "fill value must be finite");
        DenseVector(vec![value; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|&&x| x != 0.0).count()
    }

    /// `self − other`.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        axpy(-1.0, other, self)
    }

    /// `self + other`.
    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        axpy(1.0, other, self)
    }

    pub fn scaled(&self, alpha: f64) -> Result<DenseVector> {
        let out: Vec<f64> = self.0.iter().map(|x| alpha * x).collect();
        checked(out, "scale")
    }

    /// Euclidean distance `‖self − other‖₂`.
    pub fn distance(&self, other: &DenseVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// In-place `self ← alpha·x + self`. Leaves `self` untouched on error.
    pub fn axpy_assign<X: VectorOperand + ?Sized>(&mut self, alpha: f64, x: &X) -> Result<()> {
        check_dims(x.dim(), self.dim())?;
        if !alpha.is_finite() {
            return Err(Error::NonFinite("axpy coefficient"));
        }
        let mut ok = true;
        x.for_each_stored(|i, v| ok &= (alpha * v + self.0[i]).is_finite());
        if !ok {
            return Err(Error::NonFinite("axpy result"));
        }
        x.for_each_stored(|i, v| self.0[i] += alpha * v);
        Ok(())
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty() && all_finite(&values));
        DenseVector(values)
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        DenseVector::new(values)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index/value pairs with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a sparse vector from `(index, value)` pairs, validating every
    /// invariant. Zero values are rejected rather than silently dropped.
    pub fn from_entries(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sparse vector dimension must be > 0"));
        }
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if i >= dim {
                return Err(Error::invalid(format!("index {i} out of range for dim {dim}")));
            }
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(Error::invalid("sparse indices must be strictly increasing"));
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse vector"));
            }
            if v == 0.0 {
                return Err(Error::invalid(format!("explicit zero stored at index {i}")));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(SparseVector { dim, indices, values })
    }

    /// All non-zero entries of `v`.
    pub fn from_dense(v: &DenseVector) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &x) in v.as_slice().iter().enumerate() {
            if x != 0.0 {
                indices.push(i);
                values.push(x);
            }
        }
        SparseVector {
            dim: v.dim(),
            indices,
            values,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn densify(&self) -> DenseVector {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        DenseVector::from_vec_unchecked(out)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Anything that can appear as the `x` in `alpha·x + y`.
pub trait VectorOperand {
    fn dim(&self) -> usize;

    /// Visits stored entries in ascending index order.
    fn for_each_stored(&self, f: impl FnMut(usize, f64));
}

impl VectorOperand for DenseVector {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn for_each_stored(&self, mut f: impl FnMut(usize, f64)) {
        for (i, &v) in self.0.iter().enumerate() {
            f(i, v);
        }
    }
}

impl VectorOperand for SparseVector {
    fn dim(&self) -> usize {
        self.dim
    }

    fn for_each_stored(&self, mut f: impl FnMut(usize, f64)) {
        for (i, v) in self.iter() {
            f(i, v);
        }
    }
}

/// Dot product with eight interleaved partial sums, so that the loop
/// vectorises. The summation order is fixed, hence deterministic.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// Returns `alpha·x + y`.
pub fn axpy<X: VectorOperand + ?Sized>(alpha: f64, x: &X, y: &DenseVector) -> Result<DenseVector> {
    let mut out = y.clone();
    out.axpy_assign(alpha, x)?;
    Ok(out)
}

/// Total order used for selection: larger magnitude first, then lower index.
#[inline]
fn magnitude_order(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b]
        .abs()
        .total_cmp(&values[a].abs())
        .then_with(|| a.cmp(&b))
}

/// The `k` largest-magnitude entries of `v`, ties going to the lower index.
///
/// Zeros are never kept, so the result holds fewer than `k` entries when
/// `v` has fewer than `k` non-zeros. Selection is an exact introselect
/// (`select_nth_unstable_by`) over a total order, so the chosen set does
/// not depend on the input permutation beyond the tie rule.
pub fn top_k_select(v: &DenseVector, k: usize) -> Result<SparseVector> {
    let d = v.dim();
    if k < 1 || k > d {
        return Err(Error::invalid(format!("top-K requires 1 <= K <= d, got K={k}, d={d}")));
    }
    let values = v.as_slice();
    let mut kept: Vec<usize> = if k == d {
        (0..d).collect()
    } else if k <= d / 16 {
        top_k_scan(values, k)
    } else {
        let mut order: Vec<usize> = (0..d).collect();
        order.select_nth_unstable_by(k - 1, |&a, &b| magnitude_order(values, a, b));
        order.truncate(k);
        order
    };
    kept.retain(|&i| values[i] != 0.0);
    kept.sort_unstable();
    let vals = kept.iter().map(|&i| values[i]).collect();
    Ok(SparseVector {
        dim: d,
        indices: kept,
        values: vals,
    })
}

/// Single pass with a bounded heap keyed by [`magnitude_order`]; cheaper
/// than introselect when `k ≪ d`. Entries arrive in index order, so a
/// newcomer that only ties the weakest kept magnitude loses the tie.
fn top_k_scan(values: &[f64], k: usize) -> Vec<usize> {
    struct Entry<'a>(usize, &'a [f64]);
    impl PartialEq for Entry<'_> {
        fn eq(&self, other: &Self) -> bool {
            self.0 == other.0
        }
    }
    impl Eq for Entry<'_> {}
    impl PartialOrd for Entry<'_> {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    // Max-heap on "worse", so the root is the weakest kept entry.
    impl Ord for Entry<'_> {
        fn cmp(&self, other: &Self) -> Ordering {
            magnitude_order(self.1, self.0, other.0)
        }
    }
    let mut heap = BinaryHeap::with_capacity(k);
    let mut rest = values.iter().enumerate();
    for (i, &x) in rest.by_ref() {
        if x != 0.0 {
            heap.push(Entry(i, values));
            if heap.len() == k {
                break;
            }
        }
    }
    let mut weakest = heap.peek().map_or(0.0, |e| values[e.0].abs());
    for (i, &x) in rest {
        if x.abs() > weakest {
            if let Some(mut root) = heap.peek_mut() {
                *root = Entry(i, values);
            }
            weakest = heap.peek().map_or(0.0, |e| values[e.0].abs());
        }
    }
    heap.into_iter().map(|e| e.0).collect()
}

/// `Σ weight_i · msg_i` as a sparse vector.
///
/// Terms are accumulated into a dense buffer in the order given, which is
/// the same arithmetic as summing the densified messages. Coordinates
/// that cancel to exactly zero are dropped.
pub fn sparse_accumulate(terms: &[(f64, &SparseVector)]) -> Result<SparseVector> {
    let Some((_, first)) = terms.first() else {
        return Err(Error::invalid("sparse_accumulate needs at least one term"));
    };
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    let mut touched = vec![false; dim];
    for &(weight, msg) in terms {
        check_dims(msg.dim(), dim)?;
        if !weight.is_finite() {
            return Err(Error::NonFinite("accumulation weight"));
        }
        for (i, v) in msg.iter() {
            acc[i] += weight * v;
            touched[i] = true;
        }
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (i, (&x, &hit)) in acc.iter().zip(&touched).enumerate() {
        if hit && x != 0.0 {
            if !x.is_finite() {
                return Err(Error::NonFinite("sparse accumulation"));
            }
            indices.push(i);
            values.push(x);
        }
    }
    Ok(SparseVector { dim, indices, values })
}

/// `Σ weight_i · v_i` over dense vectors, accumulated left to right.
pub fn weighted_sum(terms: &[(f64, &DenseVector)]) -> Result<DenseVector> {
    let Some((_, first)) = terms.first() else {
        return Err(Error::invalid("weighted_sum needs at least one term"));
    };
    let mut acc = DenseVector(vec![0.0; first.dim()]);
    for &(w, v) in terms {
        acc.axpy_assign(w, v)?;
    }
    Ok(acc)
}

pub(crate) fn check_dims(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::invalid(format!("dimension mismatch: {got} vs {expected}")));
    }
    Ok(())
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|x| x.is_finite())
}

fn checked(values: Vec<f64>, what: &'static str) -> Result<DenseVector> {
    if all_finite(&values) {
        Ok(DenseVector(values))
    } else {
        Err(Error::NonFinite(what))
    }
}
