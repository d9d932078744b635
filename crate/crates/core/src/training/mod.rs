//! Teacher-forced training with Adam, a warmup/step-decay schedule and a
//! mixing weight drawn per batch.

mod adam;
mod fit;

pub use adam::Adam;
pub use fit::{dataset_loss, fit, EpochRecord, TrainHistory, TrainObserver, RUN_LOG};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixingWeight;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Count decay periods from epoch 0 (decays at 7, 14, ...) instead of
    /// from the end of warmup (12, 19, ...).
    pub decay_from_start: bool,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub seed: u64,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
    /// Time/channel mask widths on the audio stream; `None` picks
    /// `frames / 16` and `width / 8`.
    pub mask_time: Option<usize>,
    pub mask_channels: Option<usize>,
    pub spec_augment: bool,
    /// Mixing weight used for the logged validation loss.
    pub val_lambda: f64,
    /// Write `epoch_{k}.ckpt` after every epoch rather than only the last.
    pub checkpoint_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            peak_lr: 1e-3,
            warmup_epochs: 5,
            decay_every: 7,
            decay_factor: 0.1,
            decay_from_start: false,
            lambda_low: 0.25,
            lambda_high: 1.0,
            seed: 0,
            grad_clip: None,
            mask_time: None,
            mask_channels: None,
            spec_augment: true,
            val_lambda: 0.5,
            checkpoint_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("epochs, batch_size and decay_every must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor {} outside (0, 1]", self.decay_factor)));
        }
        if !(0.0 <= self.lambda_low && self.lambda_low <= self.lambda_high && self.lambda_high <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= lambda_low ({}) <= lambda_high ({}) <= 1",
                self.lambda_low, self.lambda_high
            )));
        }
        if !(0.0..=1.0).contains(&self.val_lambda) {
            return Err(Error::Config(format!("val_lambda {} outside [0, 1]", self.val_lambda)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Learning rate for a step. Linear from 0 over the warmup epochs (per
/// step), then constant with a multiplicative decay every `decay_every`
/// epochs.
pub fn lr_at(epoch: usize, step_in_epoch: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps_per_epoch = steps_per_epoch.max(1);
    if epoch < cfg.warmup_epochs {
        let warmup_steps = (cfg.warmup_epochs * steps_per_epoch) as f64;
        let step = (epoch * steps_per_epoch + step_in_epoch.min(steps_per_epoch - 1)) as f64;
        return cfg.peak_lr * step / warmup_steps;
    }
    let periods = if cfg.decay_from_start {
        epoch / cfg.decay_every
    } else {
        (epoch - cfg.warmup_epochs) / cfg.decay_every
    };
    cfg.peak_lr * cfg.decay_factor.powi(periods as i32)
}

/// Audio weight drawn from `U[lambda_low, lambda_high]`.
pub fn sample_lambda<R: Rng + ?Sized>(rng: &mut R, cfg: &TrainConfig) -> MixingWeight {
    let l = if cfg.lambda_low == cfg.lambda_high {
        cfg.lambda_low
    } else {
        rng.random_range(cfg.lambda_low..=cfg.lambda_high)
    };
    MixingWeight::new(l).expect("validated bounds")
}
