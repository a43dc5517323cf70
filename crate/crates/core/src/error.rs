use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImmError {
    #[error("short context {0} has no records; fall back to a smoothed model")]
    UnseenContext(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("serialized cache has no row for record {0}; call refresh first")]
    MissingCacheRow(usize),

    #[error("correction constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("solver did not converge after {iters} iterations (residual {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ImmError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> ImmError {
    ImmError::InvalidArgument(msg.into())
}
