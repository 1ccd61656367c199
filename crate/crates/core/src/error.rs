use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("semi-smooth Newton did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    ProxNotConverged {
        iterations: usize,
        residual: f64,
        best_x: Vec<f64>,
    },

    #[error("direction is not a descent direction (slope {0:e})")]
    NotDescent(f64),

    #[error("step stalled: a blocking coordinate forces a zero step")]
    StalledStep,

    #[error("inverse Hessian unavailable for an operator-based model; solve the subproblem instead")]
    InverseUnavailable,

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("conjugate gradient stagnated after {iterations} iterations (residual {residual:e})")]
    CgStagnation { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense realization not available: {0}")]
    DenseUnavailable(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("instance format error at `{path}`: {message}")]
    Format { path: String, message: String },

    #[error("unsupported instance version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
