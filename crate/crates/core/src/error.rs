use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("state error: {0}")]
    State(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::InvalidShape(format!($($arg)*)) };
}
pub(crate) use shape_err;
