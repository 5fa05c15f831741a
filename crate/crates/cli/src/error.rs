//! Failure classes and their process exit codes.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the front end itself, before or around the library.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Runtime = 3,
    Io = 4,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Classifies an error by the first recognised cause in its chain. Library
/// faults that signal a protocol or numerical problem are runtime faults;
/// every other library error stems from bad input and counts as a config
/// error.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => ExitKind::Config,
                CliError::Read { .. } | CliError::Write { .. } => ExitKind::Io,
            };
        }
        if let Some(e) = cause.downcast_ref::<pairsim::Error>() {
            return match e {
                pairsim::Error::SocGuard { .. } | pairsim::Error::PhaseTimeout { .. } | pairsim::Error::NonFinite { .. } => {
                    ExitKind::Runtime
                }
                pairsim::Error::Io(_) => ExitKind::Io,
                _ => ExitKind::Config,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return ExitKind::Config;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitKind::Io;
        }
    }
    ExitKind::Config
}
