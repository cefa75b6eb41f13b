//! Run configuration, checkpoints, cost accounting and the experiment
//! drivers behind the command-line interface.

mod bench;
mod checkpoint;
mod config;
mod experiments;
mod flops;
mod manifest;

pub use bench::{time_inference, Environment, Timing};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_VERSION};
pub use config::{BenchConfig, DataConfig, RunConfig, SweepConfig, SweepKind};
pub use experiments::{
    compare_adaptation, compare_heads, init_model, neighbor_sweep, stride_sweep, tap_accuracies, train_model,
    AdaptationResult, Benchmark, HeadResult, SweepPoint,
};
pub use flops::{count_flops, FlopReport, LayerCost};
pub use manifest::{config_hash, RunManifest};

use thiserror::Error;

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::networks::NetworkError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ToolError {
    /// Whether the failure was in the inputs rather than during the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ToolError::Config(_)
                | ToolError::Train(TrainError::Config(_))
                | ToolError::Data(DataError::Config(_))
                | ToolError::Network(NetworkError::Config(_))
                | ToolError::Json(_)
        )
    }
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;
