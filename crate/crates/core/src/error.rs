use std::path::PathBuf;

use dip_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("non-finite value at position {index} of {file}")]
    NonFiniteFeature { file: String, index: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node {anchor} has only {available} admissible negatives, {k} requested")]
    TooDense { anchor: usize, available: usize, k: usize },
    #[error("non-finite state at step {step}: {source}")]
    NumericalAbort {
        step: usize,
        #[source]
        source: TensorError,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CoreError::MissingFile(path)
        } else {
            CoreError::Io { path, source }
        }
    }
}

impl From<CoreError> for TensorError {
    /// Lets model code run inside closures that expect tensor errors, such
    /// as the finite-difference checker.
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Tensor(t) | CoreError::NumericalAbort { source: t, .. } => t,
            other => TensorError::InvalidArgument(other.to_string()),
        }
    }
}
