use thiserror::Error;

use crate::state::CumulantState;

/// Snapshot taken at the last finite state before an integration blew up.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DivergenceSnapshot {
    pub t: f64,
    pub step: u64,
    pub last_finite: CumulantState,
}

#[derive(Debug, Error)]
pub enum Error {
    /// `key` is the dotted path of the offending configuration entry.
    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("integration diverged at t = {t:.6e} s (step {step})")]
    Diverged {
        t: f64,
        step: u64,
        snapshot: Box<DivergenceSnapshot>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("peak pairing failed: {0}")]
    Pairing(String),

    #[error("lorentzian fit did not converge after {iterations} iterations")]
    FitFailed { iterations: usize },

    #[error("batch failed: {failed} of {total} trajectories failed")]
    BatchFailed { failed: usize, total: usize },

    #[error("record format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
