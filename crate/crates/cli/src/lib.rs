//! Experiment runner: dataset generation, training, evaluation and estimator
//! diagnostics driven by TOML experiment files.

pub mod commands;
pub mod config;
pub mod system;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] mdpf::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Missing(_) => "missing_input",
            CliError::Core(mdpf::Error::NonFinite(_)) => "non_finite",
            CliError::Core(mdpf::Error::Format(_) | mdpf::Error::Version { .. }) => "format",
            CliError::Core(mdpf::Error::Config(_)) => "config",
            CliError::Core(_) => "runtime",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.to_string() }).expect("plain strings serialize")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
