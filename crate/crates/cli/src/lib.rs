//! Library side of the `mfbaynet` command-line tool. Each subcommand is a
//! plain function taking a validated [`RunConfig`], so tests can drive them
//! without spawning processes.

pub mod commands;
pub mod config;
pub mod workflow;

use std::fmt;

pub use commands::{
    cmd_cokrige, cmd_gen_data, cmd_noise_study, cmd_predict, cmd_train, cmd_tune, NOISE_STUDY_LABELS,
};
pub use config::RunConfig;

/// Environment variable capping parallel kriging multi-starts.
pub const THREADS_ENV: &str = "MFBAYNET_THREADS";

/// Error with a short machine-parseable class, printed by the binary as
/// `error[<class>]: <message>` on a single line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: &'static str, message: impl Into<String>) -> Self {
        Self { class, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.class, self.message.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

impl From<mfbaynet_core::Error> for CliError {
    fn from(e: mfbaynet_core::Error) -> Self {
        CliError::new(e.class(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("serialization", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Thread budget: `MFBAYNET_THREADS` if set and positive, else the number of
/// available cores.
pub fn thread_budget() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(available),
        _ => available,
    }
}
