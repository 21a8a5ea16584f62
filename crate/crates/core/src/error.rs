use std::io;

use thiserror::Error;

use crate::tensor_ops::Dim3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { op: &'static str, expected: Dim3, actual: Dim3 },

    #[error("{op}: {msg}")]
    Structural { op: &'static str, msg: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("netspec line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at round {round}: loss is {loss}")]
    Diverged { round: usize, loss: f64 },

    #[error("worker failure: {0}")]
    Worker(String),

    #[error("volume format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn structural(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Structural { op, msg: msg.into() }
    }
}
