use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum DohaError {
    /// An argument is outside its valid range or shapes disagree.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data is unusable (non-finite samples, no usable spectrum).
    #[error("invalid data: {0}")]
    Data(String),
    /// An operation was called on an object in the wrong state.
    #[error("invalid state: {0}")]
    State(String),
    /// A computation produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, DohaError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(DohaError::Parameter(msg.into()))
}

impl From<serde_json::Error> for DohaError {
    fn from(e: serde_json::Error) -> Self {
        DohaError::Format(e.to_string())
    }
}

impl From<csv::Error> for DohaError {
    fn from(e: csv::Error) -> Self {
        DohaError::Format(e.to_string())
    }
}
