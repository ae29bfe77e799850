//! Minimal CNN engine for the stability classifier.
//!
//! Four convolution + batch-norm + ReLU + max-pool blocks followed by a
//! fully-connected softmax head, trained with Adam on softmax cross-entropy.
//! Everything is f64 and deterministic for a given seed; trained weights are
//! snapped to f32 precision so checkpoints round-trip bit-exactly.

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod model;
mod train;

pub use layers::{softmax, softmax_cross_entropy};
pub use model::{ArchDescriptor, CnnClassifier, Mode, CONV_BLOCKS};
pub use train::{fine_tune, train, EpochStats, TrainConfig, TrainData, TrainingLog};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input window is {got:?} but the model expects {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("dataset is empty or sizes disagree")]
    EmptyDataset,
    #[error("training dataset contains a single class")]
    SingleClass,
    #[error("training loss diverged (NaN) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
