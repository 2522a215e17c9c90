use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the optimizer, model and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is numerically singular (last jitter tried: {jitter:e})")]
    Singular { jitter: f64 },

    #[error("insufficient data: need at least {needed} observations, have {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("time {t} outside ramp domain [0, {t_final}]")]
    Domain { t: f64, t_final: f64 },

    #[error("no pixels between optical-depth thresholds")]
    NoSignal,

    #[error("budget {budget} is smaller than the {needed} evaluations required")]
    BudgetTooSmall { budget: usize, needed: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ensemble has not been fitted")]
    Unfitted,

    #[error("experiment endpoint unreachable: {0}")]
    EndpointUnreachable(String),

    #[error("protocol error: {message}")]
    Protocol {
        message: String,
        /// raw payload kept for diagnosis
        payload: Option<String>,
    },

    #[error("corrupt log {path}: {message}")]
    CorruptLog { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
