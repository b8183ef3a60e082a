use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("no supervised path from {src} to {tgt}: graph is not spanning")]
    NoPath { src: String, tgt: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint version: {0}")]
    CheckpointVersion(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("bound undefined: log(1/xi) = {log_inv_xi} <= delta * eps = {delta_eps}")]
    BoundUndefined { log_inv_xi: f64, delta_eps: f64 },

    #[error("enumeration refused: {size} values exceeds cap of {cap}")]
    TooLarge { size: u128, cap: u128 },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
