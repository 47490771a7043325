use altruist_core::error::SimError;
use altruist_marl::MarlError;
use altruist_nn::NnError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ARTIFACT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Missing, unreadable, unwritable or mismatched files.
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn config(field: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{field}: {reason}"))
    }

    pub fn artifact(what: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Artifact(format!("{what}: {err}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Artifact(_) => EXIT_ARTIFACT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config { .. } | NnError::Shape(_) => CliError::Config(e.to_string()),
            NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            NnError::Checkpoint(_) | NnError::Io(_) => CliError::Artifact(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<MarlError> for CliError {
    fn from(e: MarlError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else if let MarlError::Hook(msg) = e {
            CliError::Artifact(msg)
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
