use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("node {node}: {message}")]
    Graph { node: usize, message: String },

    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },

    #[error("program inputs: {0}")]
    Inputs(String),

    #[error("expected a scalar-output program, output has shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("bad magic: expected \"LADV\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint version mismatch: file has {found}, reader supports {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("overlapping tensor ranges: {0} and {1}")]
    OverlappingRanges(String, String),

    #[error("malformed checkpoint header: {0}")]
    BadHeader(String),

    #[error("missing tensor {0:?} in checkpoint")]
    MissingTensor(String),

    #[error("{what} diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Divergence {
        what: &'static str,
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("non-finite attack loss at iteration {iteration}; loss trace: {trace:?}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },

    #[error("admission check failed: {0}")]
    Admission(String),

    #[error("{what} not found at {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },

    #[error("self-test failures: {0:?}")]
    SelfTest(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn graph(node: usize, message: impl Into<String>) -> Self {
        Error::Graph {
            node,
            message: message.into(),
        }
    }
}

impl Error {
    /// Process exit status for the CLI: 1 for invalid input, 2 for failed
    /// admission, self-tests or numerics, 3 for I/O and file-format errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Inputs(_) | Error::Invalid(_) => 1,
            Error::Graph { .. }
            | Error::NonFinite { .. }
            | Error::NotScalar(_)
            | Error::Divergence { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Admission(_)
            | Error::SelfTest(_) => 2,
            Error::BadMagic(_)
            | Error::VersionMismatch { .. }
            | Error::TruncatedPayload(_)
            | Error::OverlappingRanges(..)
            | Error::BadHeader(_)
            | Error::MissingTensor(_)
            | Error::NotFound { .. }
            | Error::Io(_)
            | Error::Json(_) => 3,
        }
    }
}
