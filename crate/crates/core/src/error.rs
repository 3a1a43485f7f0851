use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation of node {node} ({op}) failed: {reason}")]
    Eval {
        node: usize,
        op: &'static str,
        reason: String,
    },

    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),

    #[error("non-finite value at perturbed point (leaf {leaf}, offset {offset:e})")]
    NonFiniteProbe { leaf: usize, offset: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("{0}")]
    Format(String),

    #[error("non-finite loss at epoch {epoch} (sample {sample}, x = {x}, loss = {loss})")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        x: f64,
        loss: f64,
        /// First few flattened parameters at the time of failure.
        snapshot: Vec<f64>,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn toml(origin: &str, text: &str, e: toml::de::Error) -> Self {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
            .unwrap_or(0);
        Error::parse(origin, line, e.message().to_string())
    }

    pub(crate) fn parse(path: impl Into<String>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
