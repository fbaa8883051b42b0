use fmae_core::{audmodel::ModelError, eval::EvalError, signals::SignalError, train::TrainError, weights::WeightError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    BadConfig { path: String, message: String },
    #[error("{0}")]
    DigestMismatch(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn bad_config(path: impl std::fmt::Display, message: impl std::fmt::Display) -> Self {
        CliError::BadConfig { path: path.to_string(), message: message.to_string() }
    }

    /// Stable identifier printed in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::BadConfig { .. } => "bad_config",
            CliError::DigestMismatch(_) => "digest_mismatch",
            CliError::Usage(_) => "usage",
            CliError::Signal(_) => "signal",
            CliError::Model(_) => "model",
            CliError::Weight(_) => "weights",
            CliError::Train(TrainError::MissingWeightTable) => "missing_weight_table",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadConfig { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
