use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epochs at which the sweep protocol inspects models; the final epoch is
/// always added.
pub const SWEEP_CHECKPOINT_EPOCHS: [usize; 10] = [1, 10, 20, 30, 40, 50, 70, 80, 100, 150];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Sorted, deduplicated, always contains `epochs` after [`TrainConfig::validate`].
    pub checkpoint_epochs: Vec<usize>,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global L2 norm limit on the loss gradient.
    pub grad_clip_norm: Option<f64>,
}

/// The sweep epochs within `[1, epochs]` plus `epochs` itself.
pub fn default_checkpoint_epochs(epochs: usize) -> Vec<usize> {
    let mut e: Vec<usize> = SWEEP_CHECKPOINT_EPOCHS
        .iter()
        .copied()
        .filter(|&k| k <= epochs)
        .collect();
    e.push(epochs);
    e.dedup();
    e
}

impl TrainConfig {
    /// Optimizer settings paired with each flow preset.
    pub fn preset(name: &str) -> Result<TrainConfig> {
        let (batch_size, learning_rate, weight_decay, epochs) = match name {
            "glow-desk" => (64, 1e-3, 0.0, 50),
            "glow-3ch" => (64, 5e-4, 0.0, 100),
            "glow-1ch" => (128, 1e-3, 1e-4, 100),
            other => return Err(Error::Config(format!("unknown training preset '{other}'"))),
        };
        Ok(TrainConfig {
            batch_size,
            learning_rate,
            weight_decay,
            epochs,
            checkpoint_epochs: default_checkpoint_epochs(epochs),
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip_norm: Some(50.0),
        })
    }

    /// Checks ranges and normalizes `checkpoint_epochs`.
    pub fn validate(&mut self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay {} must be finite and >= 0",
                self.weight_decay
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam parameters {a:?}")));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip_norm {c} must be positive")));
            }
        }
        if let Some(&bad) = self.checkpoint_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!(
                "checkpoint epoch {bad} outside [1, {}]",
                self.epochs
            )));
        }
        self.checkpoint_epochs.push(self.epochs);
        self.checkpoint_epochs.sort_unstable();
        self.checkpoint_epochs.dedup();
        Ok(())
    }
}
