use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric-domain error: {0}")]
    NumericDomain(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {path}: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { path: PathBuf, stored: u64, computed: u64 },

    #[error("dependency error: stage `{stage}` has not been run (missing {artifact})")]
    Dependency { stage: &'static str, artifact: PathBuf },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
