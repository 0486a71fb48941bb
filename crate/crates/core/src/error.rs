//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by canonfuse operations.
///
/// `Config` covers invalid parameters, malformed config files, and shape or
/// range violations caught before any data is touched. `Data` covers corrupt
/// or inconsistent runtime inputs (scene files, tensors, streams). `Io` wraps
/// filesystem failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
