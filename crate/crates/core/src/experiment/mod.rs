//! Configuration-driven experiment harness behind the `ole` binary.

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::linalg::LinalgError;
use crate::metrics::MetricsError;
use crate::network::{CheckpointError, NetworkError};
use crate::ole_loss::LossError;
use crate::optim::OptimError;

mod commands;
mod config;
pub mod gradcheck;
mod output;
mod run;

pub use commands::{cmd_gradcheck, cmd_metrics, cmd_sweep_lambda, cmd_train, SweepResult, SweepRow, TrainOutcome};
pub use config::{DatasetKind, EvalRule, ExperimentConfig, LossMode, OptimizerChoice};
pub use gradcheck::{GradcheckOptions, GradcheckReport, SuiteResult};
pub use output::{write_run_outputs, write_sweep_csv};
pub use run::{evaluate, prepare_data, train_once, EpochRecord, Evaluation, PreparedData, RunRecord, TrainedRun};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit status: 2 config, 3 data, 4 failed check, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) | ExperimentError::Checkpoint(_) => 3,
            ExperimentError::Check(_) => 4,
            _ => 1,
        }
    }
}
