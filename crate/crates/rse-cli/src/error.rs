//! CLI-level errors, each mapped to a documented exit code: 2 for
//! instruction parse errors, 3 for I/O failures, 4 for configuration and
//! validation problems.

use std::path::PathBuf;

use rse_core::instruction::ParseError;

/// Anything a subcommand can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed instruction text (exit code 2).
    #[error("instruction parse error: {0}")]
    Parse(#[from] ParseError),

    /// Filesystem or image codec failure (exit code 3).
    #[error("{path}: {message}")]
    Io {
        /// The file or directory involved.
        path: PathBuf,
        /// What went wrong.
        message: String,
    },

    /// Invalid configuration, flags, or input data (exit code 4).
    #[error("{0}")]
    Config(String),

    /// A domain invariant rejected the inputs (exit code 4).
    #[error(transparent)]
    Core(rse_core::Error),
}

impl CliError {
    /// Exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Config(_) | CliError::Core(_) => 4,
        }
    }

    /// Wraps a filesystem error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: source.to_string(),
        }
    }
}

impl From<rse_core::Error> for CliError {
    fn from(error: rse_core::Error) -> Self {
        match error {
            rse_core::Error::Parse(parse) => CliError::Parse(parse),
            other => CliError::Core(other),
        }
    }
}

/// Result alias for CLI operations.
pub type Result<T, E = CliError> = std::result::Result<T, E>;
