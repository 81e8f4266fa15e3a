//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by ingestion and analysis.
///
/// `Input` marks semantic problems (bad windows, too little normal data),
/// while `Parse` and `Io` mark malformed or unreadable input files. The CLI
/// maps the two groups to different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix an `Input` message with the pipeline stage that raised it.
    pub fn stage(self, stage: &str) -> Self {
        match self {
            Error::Input(message) => Error::Input(format!("{stage}: {message}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
