use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes or geometry do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A non-finite value showed up where a finite one was required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    /// Bad caller-supplied data, e.g. a label outside the class range.
    #[error("input error: {0}")]
    Input(String),
    /// Malformed file contents (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),
    /// A precondition that the caller was responsible for was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
