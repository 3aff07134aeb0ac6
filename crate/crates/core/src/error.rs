use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] vssa_autodiff::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tensor `{name}`: checkpoint has shape {found:?} but the model expects {expected:?}")]
    ParamShape { name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("tensor `{0}` is missing from the checkpoint")]
    MissingParam(String),

    #[error("checkpoint tensor `{0}` does not belong to this model")]
    UnexpectedParam(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("loss has no positive and no negative anchors")]
    EmptyLoss,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
