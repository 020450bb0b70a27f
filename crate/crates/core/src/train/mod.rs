//! Optimization, the training loop, checkpoints, evaluation and
//! cross-validation.

pub mod adam;
pub mod checkpoint;
pub mod crossval;
pub mod eval;
pub mod history;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_SMOOTHING;

pub use adam::{adam_update, Adam, AdamConfig, AdamMoments};
pub use checkpoint::{Checkpoint, CheckpointMeta, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use crossval::{cross_validate, CrossValOptions, CrossValReport, FoldScore, Pairing, TTestOutcome};
pub use eval::{evaluate, EvalReport, ImageScore, Segmenter};
pub use history::{BestInfo, History, HistoryRow, Split};
pub use trainer::{epoch_batches, EpochSummary, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write `last.sduc` every this many epochs; 0 writes it only at the end.
    pub checkpoint_every: usize,
    /// Smoothing of the bi-Dice loss.
    pub loss_smoothing: f64,
    /// Probability at or above which a pixel is foreground.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 4,
            epochs: 500,
            seed: 0,
            checkpoint_every: 0,
            loss_smoothing: DEFAULT_SMOOTHING,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps_adam > 0.0) {
            return fail(format!("eps_adam must be > 0, got {}", self.eps_adam));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.loss_smoothing > 0.0) {
            return fail(format!("loss_smoothing must be > 0, got {}", self.loss_smoothing));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }
}
