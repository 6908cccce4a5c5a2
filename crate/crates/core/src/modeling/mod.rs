//! Convolutional regression and classification models.

mod checkpoint;
mod data;
mod network;
pub mod nn;
mod optim;
mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricError, Task};

pub use crate::preprocess::InputMode;
pub use checkpoint::{ModelCheckpoint, TargetScale};
pub use data::{augment, image_to_pixels, normalize, Example, Target, TensorDataset};
pub use network::{BackboneSpec, Network, DEFAULT_BACKBONE};
pub use optim::{Adam, OneCycle};
pub use train::{evaluate, predict, predict_dataset, predict_for_task, train_classifier, train_regressor, Prediction};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("bad training data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}: {diagnostics}")]
    NonFinite { epoch: usize, diagnostics: String },
    #[error("checkpoint is for {actual}, but {requested} output was requested")]
    TaskMismatch { requested: Task, actual: Task },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    StandardFlipsCrops,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub input_mode: InputMode,
    pub backbone_id: String,
    /// Checkpoint whose backbone weights initialise this model.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    pub input_px: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl TrainConfig {
    /// Defaults: 30 epochs, batch 32, peak learning rate 1e-3, 224 px.
    /// Mosaics are not augmented, since flips would move category tiles.
    pub fn new(task: Task, input_mode: InputMode) -> Self {
        Self {
            task,
            input_mode,
            backbone_id: DEFAULT_BACKBONE.to_string(),
            pretrained: None,
            input_px: 224,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            augmentation: match input_mode {
                InputMode::Merged => Augmentation::None,
                _ => Augmentation::StandardFlipsCrops,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        BackboneSpec::from_id(&self.backbone_id)?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        // Two stride-2 stages need at least a 4×4 input.
        if self.input_px < 4 {
            return bad(format!("input_px must be at least 4, got {}", self.input_px));
        }
        if self.input_mode == InputMode::Merged && self.augmentation != Augmentation::None {
            return bad("mosaic inputs must not be augmented".into());
        }
        Ok(())
    }
}

/// Losses and validation metrics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// `rmse`/`r2_score` or `accuracy`/`precision_score`/`recall_score`/
    /// `fbeta_score`; `None` where a metric is undefined.
    pub metric_values: BTreeMap<String, Option<f64>>,
    pub wall_time_s: f64,
}
