//! Command surface of the `affseg` binary: dataset synthesis, flow caching,
//! training, evaluation and inference with overlay rendering.

pub mod commands;
pub mod config;
pub mod render;

use affseg::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                Error::Divergence { .. } | Error::NonFinite { .. } => EXIT_DIVERGED,
                Error::Config(_) | Error::CheckpointMismatch(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            },
        }
    }
}
