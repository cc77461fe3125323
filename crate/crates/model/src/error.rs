use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hand3r_core::Error),

    #[error(transparent)]
    Synth(#[from] hand3r_synth::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {got} hand prompts for {max} slots")]
    Capacity { got: usize, max: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: term `{term}`")]
    NonFinite { step: usize, term: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &std::path::Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }
}
