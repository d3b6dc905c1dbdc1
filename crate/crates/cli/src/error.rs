//! Command errors and their process exit codes.

use std::fmt::Display;
use std::path::Path;

use ricasso_core::Error;

/// Exit code of a successful command.
pub const EXIT_OK: i32 = 0;
/// Any failure without a more specific code.
pub const EXIT_FAILURE: i32 = 1;
/// The config does not match the schema, or the command line is malformed.
pub const EXIT_CONFIG: i32 = 2;
/// Training produced a non-finite loss or gradient.
pub const EXIT_DIVERGED: i32 = 3;
/// The checkpoint is missing, unreadable or does not match its config.
pub const EXIT_CHECKPOINT: i32 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
    #[source]
    pub source: Option<Error>,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            source: None,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn input(path: &Path, err: impl Display) -> Self {
        Self::new(EXIT_FAILURE, format!("cannot read {}: {err}", path.display()))
    }

    pub fn output(path: &Path, err: impl Display) -> Self {
        Self::new(EXIT_FAILURE, format!("cannot write {}: {err}", path.display()))
    }

    /// Any error met while loading a checkpoint.
    pub fn checkpoint(path: &Path, err: Error) -> Self {
        Self {
            code: EXIT_CHECKPOINT,
            message: format!("checkpoint {}: {err}", path.display()),
            source: Some(err),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) => EXIT_CONFIG,
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::HashMismatch { .. } => EXIT_CHECKPOINT,
            _ => EXIT_FAILURE,
        };
        Self {
            code,
            message: err.to_string(),
            source: Some(err),
        }
    }
}
