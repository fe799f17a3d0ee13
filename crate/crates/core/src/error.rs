//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("node index {index} out of range for graph of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("graph has {nodes} nodes, exceeding the exact-enumeration bound of {bound}")]
    CapacityExceeded { nodes: usize, bound: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("schedule error: step {step} exceeds total step count {total}")]
    Schedule { step: u64, total: u64 },

    #[error("non-finite gradient in tensor {tensor} at element {element}")]
    NonFiniteGradient { tensor: String, element: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("dataset has {len} examples but at least {need} are required")]
    DatasetTooSmall { len: usize, need: usize },

    #[error("source search failed: {0}")]
    Search(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format version mismatch in {path}: found {found}, this build reads version {expected}; no migration is available")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("unknown manipulation {0:?}")]
    UnknownManipulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a file path to i/o errors raised by std.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
