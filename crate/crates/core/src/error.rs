//! Error type shared across the toolkit.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// An argument violated an operation's contract.
    InvalidArgument(String),
    /// A numeric procedure failed to produce a usable result.
    NumericFailure(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A file did not match its expected format.
    Format(String),
    /// A data source yielded no usable examples.
    EmptyDataset(String),
    /// Patch recomposition left output pixels with zero window coverage.
    Coverage {
        min: (usize, usize),
        max: (usize, usize),
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::EmptyDataset(msg) => write!(f, "empty dataset: {msg}"),
            Error::Coverage { min, max } => write!(
                f,
                "uncovered pixels in recomposition, bounding box rows {}..={} cols {}..={}",
                min.0, max.0, min.1, max.1
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

/// Shorthand for `Error::InvalidArgument` construction in contract checks.
pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
