use aift_core::AiftError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] AiftError),
    #[error("output directory {0} is locked by another run")]
    Locked(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(AiftError::Io(e))
    }
}

/// Process exit status for each error class.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const INTEGRITY: i32 = 4;
    pub const RUNTIME: i32 = 1;
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Core(AiftError::Config(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(AiftError::Config(_)) | CliError::Locked(_) => exit::CONFIG,
            CliError::Core(AiftError::Input { .. }) => exit::INPUT,
            CliError::Core(AiftError::Integrity(_)) => exit::INTEGRITY,
            CliError::Core(_) => exit::RUNTIME,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
