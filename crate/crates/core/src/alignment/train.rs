//! Training step and epoch loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::AlignmentModel;
use super::optim::{OptimizerKind, OptimizerState};
use super::AlignError;
use crate::dataset::{Batch, PairedSet, DEFAULT_BATCH_SIZE};
use crate::numcore::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Fine-tuning settings: lr 2e-5, batch 32, 10 epochs.
    Finetune,
    /// From-scratch toy training: lr 1e-2, batch 32, 200 epochs.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub preset: Preset,
}

impl TrainConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (learning_rate, epochs) = match preset {
            Preset::Finetune => (2e-5, 10),
            Preset::Desk => (1e-2, 200),
        };
        Self {
            learning_rate,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs,
            seed,
            optimizer: OptimizerKind::Adam,
            preset,
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        let bad = |m: String| Err(AlignError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        Ok(())
    }
}

/// Per-epoch record. Wall time is informational and not reproducible, so
/// it is ignored by equality and serialization.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean loss over the train set before the first update.
    pub initial_train_loss: f64,
    pub train_loss: Vec<f64>,
    /// `None` when there is no validation set of at least two pairs.
    pub val_loss: Vec<Option<f64>>,
    #[serde(skip)]
    pub wall_time_secs: Vec<f64>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.initial_train_loss.to_bits() == other.initial_train_loss.to_bits()
            && self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
    }
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_time_secs: f64,
    pub logit_scale: f64,
}

/// One forward/backward pass over `batch` followed by one optimizer update.
/// Returns the loss before the update.
pub fn train_step(
    model: &mut AlignmentModel,
    batch: &Batch,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<f64, AlignError> {
    let mut tape = Tape::new();
    let loss_var = model.loss_on(&mut tape, batch)?;
    let loss = tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(AlignError::NonFiniteLoss {
            step: state.steps() + 1,
            loss,
            logit_scale: model.logit_scale(),
        });
    }
    let grads = tape.backward(loss_var)?;
    state.apply(model, &grads, config.learning_rate)?;
    Ok(loss)
}

/// Loss of a batch without any update.
pub fn batch_loss(model: &AlignmentModel, batch: &Batch) -> Result<f64, AlignError> {
    let mut tape = Tape::new();
    let v = model.loss_on(&mut tape, batch)?;
    Ok(tape.value(v).item())
}

/// Mean loss over consecutive batches; `None` if no batch of two exists.
pub fn evaluate_loss(
    model: &AlignmentModel,
    set: &PairedSet,
    batch_size: usize,
) -> Result<Option<f64>, AlignError> {
    let batches = set.sequential_batches(batch_size)?;
    if batches.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for b in &batches {
        total += batch_loss(model, b)?;
    }
    Ok(Some(total / batches.len() as f64))
}

pub fn fit(
    model: &mut AlignmentModel,
    train: &PairedSet,
    val: Option<&PairedSet>,
    config: &TrainConfig,
) -> Result<TrainHistory, AlignError> {
    fit_with(model, train, val, config, |_| {})
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each.
pub fn fit_with(
    model: &mut AlignmentModel,
    train: &PairedSet,
    val: Option<&PairedSet>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainHistory, AlignError> {
    config.validate()?;
    if train.len() < 2 {
        return Err(AlignError::InvalidConfig(format!(
            "train split needs at least 2 pairs, got {}",
            train.len()
        )));
    }
    let mut state = OptimizerState::new(config.optimizer);
    let mut history = TrainHistory {
        initial_train_loss: evaluate_loss(model, train, config.batch_size)?.unwrap_or(f64::NAN),
        ..Default::default()
    };
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let batches = train.batches(config.batch_size, config.seed, epoch as u64)?;
        let mut total = 0.0;
        for batch in &batches {
            total += train_step(model, batch, &mut state, config)?;
        }
        let train_loss = total / batches.len() as f64;
        let val_loss = match val {
            Some(v) => evaluate_loss(model, v, config.batch_size)?,
            None => None,
        };
        let wall = started.elapsed().as_secs_f64();
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.wall_time_secs.push(wall);
        on_epoch(&EpochReport {
            epoch,
            train_loss,
            val_loss,
            wall_time_secs: wall,
            logit_scale: model.logit_scale(),
        });
    }
    Ok(history)
}
