use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: expected D={expected}, got D={found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDim(usize),

    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("degenerate chain")]
    DegenerateChain,

    #[error("no observations")]
    NoObservations,

    #[error("insufficient support for occlusion segment {start}..={end}")]
    InsufficientSupport { start: usize, end: usize },

    #[error("tracking session failed: {0}")]
    SessionFailed(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("{path}: line {line}: {msg}")]
    Dataset {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty trace")]
    EmptyTrace,

    #[error("{0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
