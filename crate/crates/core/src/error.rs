use thiserror::Error;

/// Errors raised by the tail-bound engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric failure: {message} (achieved error estimate {achieved:e})")]
    Numeric { message: String, achieved: f64 },

    #[error("parse error at offset {offset}: {message} (near `{token}`)")]
    Parse {
        offset: usize,
        token: String,
        message: String,
    },

    #[error("plan rejected: {0}")]
    Budget(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
