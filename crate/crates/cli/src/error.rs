//! Harness-level errors with machine-parseable class labels.

use himt_core::CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("path error for {path}: {source}")]
    Path {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training diverged; carries fold/epoch/patient context.
    #[error("training aborted: {0}")]
    Training(String),
}

impl CliError {
    /// One-word class for the CLI's single-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => "config",
            CliError::Path { .. } => "path",
            CliError::Training(_) => "numeric",
        }
    }
}
