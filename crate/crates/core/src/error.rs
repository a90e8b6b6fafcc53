use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A row that could not be ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source table.
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{failed} of {total} rows failed to ingest (allowed fraction {allowed}); first: {}", first.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    RowErrors {
        failed: usize,
        total: usize,
        allowed: f64,
        first: Vec<RowError>,
    },

    #[error("non-finite value in domain {domain}: {what}")]
    NonFinite { domain: usize, what: &'static str },

    #[error("non-finite loss at epoch {epoch}, pass {pass}, batch {batch}")]
    Diverged {
        epoch: u32,
        pass: &'static str,
        batch: usize,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Schema(_) | Error::Data(_) | Error::RowErrors { .. } | Error::File { .. } => ErrorKind::Data,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::UndefinedMetric(_) => ErrorKind::Numerical,
            Error::Checkpoint(_) | Error::Io(_) => ErrorKind::Other,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
