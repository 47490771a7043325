use thiserror::Error;

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A configuration value violates its documented constraint.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("position ({x:.3}, {y:.3}) is outside the road bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The caller broke the stepping protocol (wrong or missing actions).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("domain error: {0}")]
    Domain(String),
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> SimResult<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFinite(what))
    }
}
