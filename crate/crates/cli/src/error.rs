use std::process::ExitCode;

use thiserror::Error;

/// Failures that end a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit 1.
    #[error("{0}")]
    Config(String),
    /// The command finished but some clips failed. Exit 2.
    #[error("{errored} clip(s) failed; see the report")]
    Partial { errored: usize },
    /// Input or output could not be read or written. Exit 3.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 1,
            CliError::Partial { .. } => 2,
            CliError::Io(_) => 3,
        })
    }
}
