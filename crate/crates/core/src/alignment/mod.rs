//! Projection heads, contrastive objective, optimizer, training loop and
//! checkpoints.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod train;


pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use model::{
    joint_embed, similarity_logits, symmetric_loss, tau_bounds, AlignmentModel, ModelConfig,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{
    evaluate_loss, fit, fit_with, train_step, EpochReport, Preset, TrainConfig, TrainHistory,
};

use std::path::Path;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::encoders::EncoderError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at step {step} (logit scale {logit_scale})")]
    NonFiniteLoss { step: u64, loss: f64, logit_scale: f64 },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl AlignError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
