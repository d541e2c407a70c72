use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("landscape generation failed: {0}")]
    Generation(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("prompt composition error: missing slot '{0}'")]
    MissingSlot(&'static str),

    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),

    #[error("sandbox error: {0}")]
    Sandbox(String),

    #[error("evolution engine error: {0}")]
    Engine(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (CLI exit code 1) as opposed
    /// to internal failures (exit code 2).
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Precondition(_)
        )
    }
}

/// Failures surfaced by a language-model provider.
#[derive(Debug, Error)]
pub enum ProviderError {
    /// Retryable failure (network hiccup, rate-limit response).
    #[error("transient provider failure: {0}")]
    Transient(String),

    /// Non-retryable failure (bad credentials, malformed request).
    #[error("provider failure: {0}")]
    Fatal(String),

    /// The replay store has no response recorded for this prompt digest.
    #[error("no recorded response for digest {0}")]
    NotRecorded(String),

    /// Retries exhausted; wraps the last transient failure.
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}
