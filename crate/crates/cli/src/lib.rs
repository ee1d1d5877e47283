//! Library side of the `wsurgery` binary. Each subcommand is a plain function
//! so tests can drive it without spawning a process.

pub mod commands;
pub mod config;
pub mod files;

use std::path::PathBuf;

pub use commands::{cmd_attack, cmd_convert, cmd_detect, cmd_eval, cmd_gen, cmd_hide};
pub use config::RunConfig;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const SURGERY_DETECTED: i32 = 2;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] weight_surgery::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: weight_surgery::Error },
    #[error("{path}:{line}: {message}")]
    Csv { path: PathBuf, line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
