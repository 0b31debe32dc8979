//! Experiment harness: configuration, BMI/SE/BER sweeps and CSV output.

pub mod config;
pub mod experiments;
pub mod output;

use thiserror::Error;

use shaping_core::constellation::ConstellationError;
use shaping_core::evaluation::EvalError;
use shaping_core::models::ModelError;
use shaping_core::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fec(#[from] shaping_fec::FecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
}

impl CliError {
    /// Process exit status for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Checkpoint(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 5,
            CliError::Fec(_) | CliError::Model(_) | CliError::Constellation(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::ExactOnFading => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Io(io) => CliError::Io(io),
            TrainError::Model(m) => CliError::Model(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ExactOnFading | EvalError::NoSamples => CliError::Config(e.to_string()),
            EvalError::Model(m) => CliError::Model(m),
            EvalError::Demapper(d) => CliError::Numerical(d.to_string()),
        }
    }
}
