use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while building, running or persisting a network.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("batch norm needs at least 2 rows in training mode, got {0}")]
    BatchSize(usize),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("architecture mismatch: checkpoint fingerprint {found:#010x}, expected {expected:#010x}")]
    Version { expected: u32, found: u32 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn in_layer(self, index: usize, kind: &'static str) -> Self {
        Error::Layer {
            index,
            kind,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_batch(self, batch: usize) -> Self {
        Error::Batch {
            batch,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
