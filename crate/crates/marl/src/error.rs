use altruist_core::error::SimError;
use altruist_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("episode {episode}, step {step}: {source}")]
    Env {
        episode: usize,
        step: usize,
        #[source]
        source: SimError,
    },

    /// Non-finite activations, losses or gradients.
    #[error("episode {episode}, step {step}: {source}")]
    Numeric {
        episode: usize,
        step: usize,
        #[source]
        source: NnError,
    },

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Nn(#[from] NnError),

    /// Raised by a caller-supplied training hook.
    #[error("{0}")]
    Hook(String),
}

impl MarlError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        MarlError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for configuration problems, wherever they were detected.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            MarlError::Config { .. } | MarlError::Sim(SimError::Config { .. }) | MarlError::Nn(NnError::Config { .. })
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, MarlError::Numeric { .. } | MarlError::Nn(NnError::NonFinite { .. }))
    }
}

pub type MarlResult<T> = Result<T, MarlError>;
