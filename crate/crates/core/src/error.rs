use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown form `{0}`")]
    UnknownForm(String),

    #[error("invalid poem: {0}")]
    InvalidPoem(String),

    #[error("malformed serialized text: {0}")]
    Malformed(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("phonology table line {line}: {message}")]
    Phonology { line: usize, message: String },

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("sampling error: {0}")]
    Sampling(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
