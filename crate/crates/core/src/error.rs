use std::path::PathBuf;

use thiserror::Error;

use crate::engine::EngineError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch in item {item:?}, field `{field}`: expected {expected}, found {found}")]
    Dimension {
        item: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid graph {item:?}: {reason}")]
    InvalidGraph { item: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("digest mismatch for {what}: expected {expected}, found {found}")]
    DigestMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Dimension { .. } => "dimension",
            Error::InvalidGraph { .. } => "invalid-graph",
            Error::Config(_) => "config",
            Error::Engine(_) => "engine",
            Error::Diverged { .. } => "diverged",
            Error::DigestMismatch { .. } => "digest-mismatch",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
