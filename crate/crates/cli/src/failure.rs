use std::fmt::Display;
use std::path::Path;

use ldpo_core::Error;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn config(message: impl Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    /// Data error prefixed with the file it concerns.
    pub fn at(path: &Path, message: impl Display) -> Self {
        Self::data(format!("{}: {message}", path.display()))
    }
}

/// Classify an error raised while training or evaluating.
pub fn from_run(e: Error) -> Failure {
    match e {
        Error::DivergenceDetected { .. } => Failure {
            code: EXIT_DIVERGED,
            message: e.to_string(),
        },
        Error::InvalidConfig(_) => Failure::config(e),
        _ => Failure::data(e),
    }
}
