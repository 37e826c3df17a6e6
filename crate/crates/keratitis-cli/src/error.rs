//! CLI-facing error type with exit-code mapping.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input data, configuration or arguments (exit code 1).
    #[error("{0}")]
    Validation(String),
    /// A pipeline stage is missing an upstream artifact (exit code 1).
    #[error("stage `{stage}` requires `{missing}`; run the earlier stages first")]
    Dependency {
        stage: &'static str,
        missing: PathBuf,
    },
    /// Filesystem failure (exit code 2).
    #[error("i/o error at `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Dependency { .. } => 1,
            CliError::Io { .. } => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<keratitis_core::Error> for CliError {
    fn from(err: keratitis_core::Error) -> Self {
        CliError::Validation(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
