use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NonPsd(f64),
    #[error("empty input")]
    Empty,
    #[error("degenerate update: every sample weight is zero")]
    DegenerateUpdate,
    #[error("source cannot draw an independent second next-state sample")]
    NoDoubleSampling,
    #[error("sampling distribution has a zero entry at state {0}")]
    ZeroWeight(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("covariance repair failed: {0}")]
    CovarianceRepair(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
