use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("trajectory {row} failed (A = {amplitude}, v0 = {v0}, t_stop = {t_stop}): {source}")]
    Trajectory {
        row: usize,
        amplitude: f64,
        v0: f64,
        t_stop: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate data set: {0}")]
    Degenerate(String),

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("point lies outside the data support (kernel mass {mass:e})")]
    OutOfSupport { mass: f64 },

    #[error("newton iteration did not converge: {0}")]
    Newton(String),

    #[error("unknown {kind} strategy `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
