use thiserror::Error;

/// Errors raised by the learning-curve, simulation and regression routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no crossing of entropy and energy at alpha = {alpha}")]
    NoCrossing { alpha: f64 },

    #[error("no transition detected for alpha in [{lo}, {hi}]")]
    NoTransition { lo: f64, hi: f64 },

    #[error("rank deficient: A^T A is {shortfall} short of full rank {full}")]
    RankDeficient { shortfall: usize, full: usize },

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
