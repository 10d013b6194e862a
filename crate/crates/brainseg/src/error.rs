//! Errors for file formats, configuration and training orchestration.

use std::path::PathBuf;

/// Exit code for usage and validation failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for runtime failures after validation passed.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] brainseg_core::Error),

    #[error("{0}")]
    Validation(String),

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

impl Error {
    pub fn validation(detail: impl Into<String>) -> Self {
        Error::Validation(detail.into())
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: validation and parse problems are usage errors,
    /// everything that fails after validation is a runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Diverged { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
