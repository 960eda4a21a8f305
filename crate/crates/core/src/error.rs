use nalgebra::DVector;
use thiserror::Error;

/// Errors surfaced by the estimation and inference kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// An input contained NaN or infinite entries.
    #[error("non-finite numerical input: {0}")]
    NonFiniteInput(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// An observation coincides with the evaluation point; the sample
    /// carries no usable curvature information and must be skipped.
    #[error("degenerate sample: observation coincides with the evaluation point")]
    DegenerateSample,

    /// A confidence-interval direction was the zero vector.
    #[error("invalid direction: x0 must be non-zero")]
    InvalidDirection,

    /// A variance quadratic form collapsed to a non-positive value.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Quantile argument outside (0, 1) or similar domain violation.
    #[error("domain error: {0}")]
    Domain(&'static str),

    /// An iterative solver ran out of iterations; carries the last iterate.
    #[error("no convergence after {iterations} iterations (residual {grad_norm:.3e})")]
    NonConvergence {
        last: DVector<f64>,
        iterations: usize,
        grad_norm: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
