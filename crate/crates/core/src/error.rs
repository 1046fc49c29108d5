use thiserror::Error;

/// Errors raised by the estimators, baselines and generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient rows to standardize: need at least 2, got {0}")]
    InsufficientRows(usize),

    #[error("inertial OLS singular")]
    InertialOlsSingular,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("orthogonality violated: max |X'X - I| = {0:.3e}")]
    OrthogonalityViolated(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no feasible hyperparameters")]
    NoFeasibleHyperparameters,
}

pub type Result<T> = std::result::Result<T, Error>;
