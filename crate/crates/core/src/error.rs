use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("invalid manifest: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace ingest error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("prediction unavailable: {0}")]
    Prediction(String),

    #[error("instance too large: {states} enumeration states exceeds guard of {limit}")]
    TooLarge { states: u128, limit: u128 },

    #[error("no feasible plan")]
    Infeasible,

    #[error("episode exhausted: no chunks remaining")]
    Exhausted,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("round failed: {0}")]
    Round(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
