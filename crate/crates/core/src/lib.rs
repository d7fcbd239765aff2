//! Simulation of distributed SGD with top-K sparsification and error
//! feedback, in unidirectional and bidirectional variants, together with
//! the diagnostics used to check the convergence analysis numerically.

pub mod compression;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod protocol;
pub mod rng;
pub mod verify;

pub use compression::{compress, gamma_floor, k_from_sparsity, CompressionOutcome, CompressorSpec};
pub use error::{Error, FilePosition, Result};
pub use linalg::{axpy, sparse_accumulate, top_k_select, weighted_sum, DenseVector, SparseVector};

// The guide's snippets are compiled and run as doctests of these modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sparsification.md")]
    mod sparsification {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
