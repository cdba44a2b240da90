use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Solver(#[from] chance_core::Error),

    /// The run finished but some solver hit its iteration cap. Outputs were written.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Solver(chance_core::Error::Argument(_) | chance_core::Error::Configuration(_)) => 2,
            HarnessError::Solver(chance_core::Error::NonConvergence(_)) | HarnessError::NonConvergence(_) => 3,
            HarnessError::Io { .. } => 4,
            HarnessError::Solver(_) => 1,
        }
    }
}
