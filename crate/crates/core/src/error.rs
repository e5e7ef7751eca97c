use thiserror::Error;

/// Failure categories shared by every module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("structural: {0}")]
    Structural(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("integration failed at t={t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        last_state: Box<crate::meanfield::FractionVector>,
    },
    #[error("fixed-point solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by bad user input, as opposed to numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Structural(_) | Error::Domain(_))
    }
}
