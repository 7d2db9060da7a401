//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by solver, simulator, and configuration code.
///
/// Programming errors (dimension mismatches, calling a completion map on the
/// idle state) panic instead; only conditions a caller can meaningfully react
/// to are represented here.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration or scenario description.
    #[error("configuration error: {0}")]
    Config(String),

    /// The integrator produced a non-finite value.
    #[error("numerical failure at t = {t}: {message}")]
    Numerical { t: f64, message: String },

    /// An estimator was asked to work from too few samples.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
