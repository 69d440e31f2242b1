use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    ConfigFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sampling contract violated: {0}")]
    Sampling(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("batch statistics need at least 2 rows, got {0}")]
    BatchStatistics(usize),

    #[error("invalid state: {0}")]
    State(String),

    #[error("evaluation failed: {0}")]
    Eval(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
