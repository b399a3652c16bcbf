//! Experiment orchestration: configs, checkpoints, CSV reports, and the
//! train / analyze / verify / report commands behind the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csvout;
pub mod report;
pub mod run;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::{Analysis, ExperimentConfig};
pub use run::{cmd_analyze, cmd_train, TrainOutput};
pub use verify::{cmd_verify, CheckResult, VerifyReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{message}")]
    Usage { message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("missing required config key `{key}`")]
    MissingKey { key: String },
    #[error("config key `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("invalid checkpoint: {message}")]
    CheckpointFormat { message: String },
    #[error("checkpoint hyperparameters do not match the config")]
    HyperMismatch,
    #[error("refused: {reason}")]
    Refused { reason: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}
