use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A randomized model construction could not satisfy its constraints;
    /// retrying with a different seed may succeed.
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular least-squares system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("invalid estimate: {0}")]
    InvalidEstimate(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("no spectral peak found")]
    NoPeak,

    #[error("no successful trials to aggregate")]
    EmptyResult,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input (config, arguments, files)
    /// rather than a failed estimation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse(_) | Error::InvalidArgument(_)
        )
    }
}
