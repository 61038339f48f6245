use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("rejection sampling exhausted after {attempts} attempts; tau/delta infeasible for this gallery")]
    SamplingExhausted { attempts: usize },

    #[error("degenerate coupling: canonical correlation {0} must lie in [0, 1)")]
    DegenerateCoupling(f64),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("training diverged at step {step}; try a smaller step size (current {step_size})")]
    Diverged { step: usize, step_size: f64 },

    #[error("oracle ensemble is empty")]
    EmptyEnsemble,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
