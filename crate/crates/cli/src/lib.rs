//! Command-line driver: corpus synthesis, training, transform previews,
//! detection, evaluation and the loss-mode ablation.

pub mod commands;
pub mod config;
pub mod error;
pub mod outdir;
pub mod pipeline;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
