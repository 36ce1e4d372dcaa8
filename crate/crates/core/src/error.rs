//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by operator construction, Krylov routines, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix has a size other than the one required.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative routine produced a non-finite quantity or an indefinite
    /// pivot and cannot continue.
    #[error("numerical breakdown at iteration {iteration}: {detail}")]
    NumericalBreakdown { iteration: usize, detail: String },

    /// Conjugate gradients stopped at `max_iters` without reaching the
    /// requested tolerance.
    #[error("conjugate gradients did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    CgDidNotConverge { residual: f64, iterations: usize },

    /// A point falls outside the region of a grid where a full cubic
    /// interpolation stencil exists.
    #[error("point {index} (value {value}) lies outside the interpolable range [{lo}, {hi}]")]
    OutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// The kernel does not factor into a product of one-dimensional kernels.
    #[error("unsupported product decomposition: {0}")]
    UnsupportedDecomposition(String),

    /// A dense factorization (Cholesky or eigendecomposition) failed.
    #[error("dense factorization failed: {0}")]
    FactorizationFailed(String),

    /// Model serialization or deserialization failed.
    #[error("model serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
