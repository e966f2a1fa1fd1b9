use std::{io, path::Path};

use dropflat_core::Error as CoreError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    Config = 2,
    Numeric = 3,
    Integrity = 4,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numeric,
            message: message.into(),
        }
    }

    pub fn integrity(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Integrity,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        let kind = if err.kind() == io::ErrorKind::NotFound {
            ExitKind::Config
        } else {
            ExitKind::Other
        };
        Self {
            kind,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// An input artifact that another subcommand should have produced.
    pub fn missing(path: &Path, producer: &str) -> Self {
        Self::config(format!(
            "missing {}; run `dropflat {producer}` with the same --out first",
            path.display()
        ))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::Dimension { .. } | CoreError::Config(_) => ExitKind::Config,
            CoreError::Numeric(_)
            | CoreError::Divergence { .. }
            | CoreError::DegenerateMinimum { .. }
            | CoreError::PhaseTimeout { .. }
            | CoreError::Asymmetry { .. } => ExitKind::Numeric,
            // A stored artifact that fails to parse has been damaged.
            CoreError::Parse { .. } | CoreError::Integrity(_) => ExitKind::Integrity,
            CoreError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => ExitKind::Config,
            CoreError::Io { .. } => ExitKind::Other,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}
