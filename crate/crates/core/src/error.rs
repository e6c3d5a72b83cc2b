use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The template has zero derivative energy, so every shift scores the same.
    #[error("template is constant; the shift is not identifiable")]
    ConstantTemplate,

    /// All observations are equal, so the rank criterion does not depend on the shift.
    #[error("signal is degenerate: all {n} values are equal")]
    DegenerateSignal { n: usize },

    #[error("signal too short: need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("every replicate failed; first error: {0}")]
    AllReplicatesFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ConstantTemplate
                | Error::DegenerateSignal { .. }
                | Error::TooShort { .. }
                | Error::InvalidTemplate(_)
                | Error::InvalidConfig(_)
                | Error::InvalidInput(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
