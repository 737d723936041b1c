use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions do not satisfy an operation's shape contract.
    #[error("shape error: {0}")]
    Shape(String),
    /// A parameter is outside its admissible domain.
    #[error("invalid parameter: {0}")]
    Domain(String),
    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A file does not conform to its declared format.
    #[error("data format error: {0}")]
    Format(String),
    /// A non-finite value appeared where finite math is required.
    #[error("numerical failure: {0}")]
    NonFinite(String),
    /// An API was called out of sequence (e.g. a stale tape).
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for malformed data files, 4 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Domain(_) | Error::Config(_) | Error::Usage(_) => 2,
            Error::Format(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
