use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("state error: {0}")]
    State(String),

    #[error("one-time key already used for a signature")]
    OneTimeKeyReuse,

    #[error("rejected transaction: {0}")]
    RejectedTransaction(String),

    #[error("double submission: pseudonym {0} already present in chain")]
    DoubleSubmission(String),

    #[error("mining failed: nonce space exhausted at difficulty {0}")]
    MiningFailure(u32),

    #[error("chain validation failed at block {index}: {reason}")]
    ChainInvalid { index: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
