//! Supervised training: optimizer schedule, stride-dependent loss weights,
//! and a mini-batch loop shared with self-training.

mod engine;
mod model;
mod report;

pub use engine::{train_items, train_supervised, Objective, Validation};
pub use model::{prepare_samples, LandmarkModel, ModelSpec};
pub use report::{EpochRecord, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::networks::NetworkError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Which image scale a stride refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrideLadder {
    /// 256-pixel inputs: strides 16, 32, 64, 128.
    Paper,
    /// 64-pixel inputs: strides 4, 8, 16, 32.
    Toy,
}

impl StrideLadder {
    pub fn strides(&self) -> [usize; 4] {
        match self {
            StrideLadder::Paper => [16, 32, 64, 128],
            StrideLadder::Toy => [4, 8, 16, 32],
        }
    }
}

const COEFFICIENTS: [f64; 4] = [0.02, 0.1, 0.125, 0.25];

/// Offset and neighbor loss weights `(alpha, beta)` for a stride.
pub fn coefficient_table(stride: usize, ladder: StrideLadder) -> Result<(f64, f64)> {
    let pos = ladder
        .strides()
        .iter()
        .position(|&s| s == stride)
        .ok_or_else(|| TrainError::Config(format!("stride {stride} is not on the {ladder:?} ladder")))?;
    Ok((COEFFICIENTS[pos], COEFFICIENTS[pos]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    /// Desk-scale schedule: two tenfold decays at the same relative points
    /// as the full 60-epoch schedule.
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-4, decay_epochs: vec![15, 25], decay_factor: 10.0, batch_size: 16, seed: 0 }
    }
}

impl TrainSchedule {
    pub fn full_scale() -> Self {
        Self { epochs: 60, decay_epochs: vec![30, 50], ..Self::default() }
    }

    /// Same schedule shape compressed to `epochs`.
    pub fn scaled(&self, epochs: usize) -> Self {
        let f = epochs as f64 / self.epochs.max(1) as f64;
        let mut decay_epochs: Vec<usize> =
            self.decay_epochs.iter().map(|&d| (d as f64 * f).round() as usize).filter(|&d| d >= 1 && d < epochs).collect();
        decay_epochs.dedup();
        Self { epochs, decay_epochs, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.decay_factor > 0.0) {
            return Err(TrainError::Config(format!("bad learning rate {} or decay {}", self.lr, self.decay_factor)));
        }
        if let Some(&d) = self.decay_epochs.iter().find(|&&d| d >= self.epochs) {
            return Err(TrainError::Config(format!("decay epoch {d} is not before the last epoch {}", self.epochs)));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based).
pub fn lr_schedule(epoch: usize, sched: &TrainSchedule) -> f64 {
    let passed = sched.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    sched.lr / sched.decay_factor.powi(passed as i32)
}
