use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MatError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("invalid input at position {position}: {message}")]
    Input { position: usize, message: String },

    #[error("init error: {field} mismatch (base {base}, target {target})")]
    Init {
        field: &'static str,
        base: String,
        target: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl MatError {
    pub fn config(msg: impl Into<String>) -> Self {
        MatError::Config(vec![msg.into()])
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        MatError::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MatError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic {0:02x?})")]
    BadMagic(Vec<u8>),

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("tensor `{name}`: shape {shape:?} needs {expected} values, payload has {actual}")]
    PayloadLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),

    #[error("malformed config blob: {0}")]
    ConfigBlob(String),

    #[error("parameter table mismatch: {0}")]
    ParamTable(String),
}
