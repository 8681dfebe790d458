//! Error type shared across the workspace, with the CLI exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or violated call contract (bad shapes, bad args).
    #[error("config error: {0}")]
    Config(String),

    /// Data ingestion failure (bad magic, truncation, parse errors, ...).
    #[error("data ingestion error: {0}")]
    Ingest(String),

    /// Non-finite loss or parameters encountered during training.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    /// Filesystem failure while persisting results.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn ingest(msg: impl Into<String>) -> Self {
        Error::Ingest(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }

    /// Process exit code: 1 config error, 2 data ingestion, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 1,
            Error::Ingest(_) => 2,
            Error::NonFinite(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
