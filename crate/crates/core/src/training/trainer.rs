use rand::RngCore;

use super::{adam_step, AdamParams, Checkpoint, OptimizerState, TrainConfig};
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::{derive_stream, Real, SeededRng, Tensor};

const TRAIN_STREAM: u64 = 0x54_5241_494e;
const DEQUANT_TAG: u64 = 0x4451_4e54;

/// Summary of one finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean over samples of the per-sample BPD seen during the epoch
    /// (each batch evaluated before its update).
    pub mean_bpd: f64,
    pub batches: usize,
    /// Number of batches whose gradient was rescaled by the norm limit.
    pub clipped_batches: usize,
}

/// Mutable training state. Every epoch draws one word from a master
/// generator; shuffling and dequantization noise are derived from that word,
/// so restoring the master state reproduces all later epochs exactly.
pub struct Trainer<T> {
    model: FlowModel<T>,
    optimizer: OptimizerState<T>,
    config: TrainConfig,
    rng: SeededRng,
    epoch: usize,
    loss_history: Vec<f64>,
    data_source: String,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: FlowModel<T>, mut config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: OptimizerState::zeros_like(model.params()),
            rng: SeededRng::new(config.seed, TRAIN_STREAM),
            model,
            config,
            epoch: 0,
            loss_history: Vec::new(),
            data_source: String::new(),
        })
    }

    /// Continues from a checkpoint. `config` may extend `epochs`; the
    /// optimizer settings should match the original run for exact resumption.
    pub fn resume(checkpoint: Checkpoint<T>, mut config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if checkpoint.epoch > config.epochs {
            return Err(Error::Config(format!(
                "checkpoint is at epoch {}, beyond the configured {} epochs",
                checkpoint.epoch, config.epochs
            )));
        }
        let rng = SeededRng::from_state(&checkpoint.rng)
            .ok_or_else(|| Error::Consistency("checkpoint RNG state is unreadable".into()))?;
        Ok(Trainer {
            model: checkpoint.model,
            optimizer: checkpoint.optimizer,
            config,
            rng,
            epoch: checkpoint.epoch,
            loss_history: checkpoint.loss_history,
            data_source: checkpoint.data_source,
        })
    }

    /// Recorded in checkpoints.
    pub fn set_data_source(&mut self, label: impl Into<String>) {
        self.data_source = label.into();
    }

    pub fn model(&self) -> &FlowModel<T> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            epoch: self.epoch,
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.state(),
            loss_history: self.loss_history.clone(),
            train_config: self.config.clone(),
            data_source: self.data_source.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One pass over `data` in a seeded order. ActNorm layers are initialized
    /// from the first batch if the model is fresh. On a non-finite loss or
    /// gradient the model is left as it was before the offending batch.
    pub fn run_epoch(&mut self, data: &ImageBatch) -> Result<EpochReport> {
        if data.image_shape() != self.model.config().image_shape {
            return Err(Error::Shape(format!(
                "data images {:?} do not match model {:?}",
                data.image_shape(),
                self.model.config().image_shape
            )));
        }
        if data.levels() != self.model.config().quantization_levels {
            return Err(Error::Config(format!(
                "data has {} levels, model expects {}",
                data.levels(),
                self.model.config().quantization_levels
            )));
        }
        let epoch = self.epoch + 1;
        let epoch_seed = self.rng.next_u64();
        let order = SeededRng::new(epoch_seed, 0).permutation(data.len());
        let d = self.model.dims() as f64;
        let levels_ln = (self.model.config().quantization_levels as f64).ln();
        let ln2 = std::f64::consts::LN_2;
        let adam = AdamParams {
            learning_rate: self.config.learning_rate,
            weight_decay: self.config.weight_decay,
            beta1: self.config.adam.beta1,
            beta2: self.config.adam.beta2,
            eps: self.config.adam.eps,
        };
        let mut bpd_sum = 0.0;
        let mut batches = 0;
        let mut clipped = 0;
        for (b, positions) in order.chunks(self.config.batch_size).enumerate() {
            let batch = data.select(positions);
            let x: Tensor<T> = batch.dequantize(epoch_seed, derive_stream(DEQUANT_TAG, epoch as u64, 0));
            if !self.model.is_initialized() {
                let report = self.model.actnorm_init(&x)?;
                if report.floored_channels > 0 {
                    log_floor(report.floored_channels, report.total_channels);
                }
            }
            let res = self.model.log_prob_and_gradients(&x)?;
            let n = positions.len() as f64;
            let batch_bpd: f64 = res
                .per_sample_log_prob
                .iter()
                .map(|&l| (-l / d + levels_ln) / ln2)
                .sum();
            if !batch_bpd.is_finite() {
                return Err(Error::numeric(
                    format!("training epoch {epoch} batch {b}"),
                    format!("non-finite loss {batch_bpd}"),
                ));
            }
            let mut grads = res.per_layer_gradients.expect("gradients requested");
            // loss = mean BPD = -(1 / (n D ln 2)) sum log p + const
            let mut scale = -1.0 / (n * d * ln2);
            let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt() * scale.abs();
            if !norm.is_finite() {
                return Err(Error::numeric(
                    format!("training epoch {epoch} batch {b}"),
                    "non-finite gradient".to_string(),
                ));
            }
            if let Some(limit) = self.config.grad_clip_norm {
                if norm > limit {
                    scale *= limit / norm;
                    clipped += 1;
                }
            }
            for g in &mut grads {
                for v in g.as_mut_slice() {
                    *v = T::of(v.as_f64() * scale);
                }
            }
            let mut next = self.model.params().to_vec();
            let mut next_opt = self.optimizer.clone();
            adam_step(&mut next, &grads, &mut next_opt, &adam)?;
            if let Some(bad) = self.model.layers().iter().zip(&next).find(|(_, p)| !p.is_finite()) {
                return Err(Error::numeric(
                    format!("training epoch {epoch} batch {b}"),
                    format!("update made {} non-finite", bad.0.name),
                ));
            }
            self.model.params_mut().clone_from_slice(&next);
            self.optimizer = next_opt;
            bpd_sum += batch_bpd;
            batches += 1;
        }
        let mean_bpd = bpd_sum / data.len() as f64;
        self.epoch = epoch;
        self.loss_history.push(mean_bpd);
        Ok(EpochReport {
            epoch,
            mean_bpd,
            batches,
            clipped_batches: clipped,
        })
    }

    /// Trains up to `config.epochs`, calling `on_epoch` after every epoch with
    /// the trainer state (so callers can checkpoint when the epoch is listed
    /// in `checkpoint_epochs`).
    pub fn run(
        &mut self,
        data: &ImageBatch,
        mut on_epoch: impl FnMut(&Self, &EpochReport) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let report = self.run_epoch(data)?;
            on_epoch(self, &report)?;
        }
        Ok(())
    }

    pub fn is_checkpoint_epoch(&self) -> bool {
        self.config.checkpoint_epochs.contains(&self.epoch)
    }
}

fn log_floor(floored: usize, total: usize) {
    eprintln!("actnorm init: {floored} of {total} channels hit the variance floor");
}

/// Trains a fresh model on `data` and returns the checkpoints listed in
/// `config.checkpoint_epochs`.
pub fn train<T: Real>(model: FlowModel<T>, data: &ImageBatch, config: TrainConfig) -> Result<Vec<Checkpoint<T>>> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.set_data_source(data.source());
    let mut out = Vec::new();
    trainer.run(data, |t, _| {
        if t.is_checkpoint_epoch() {
            out.push(t.checkpoint());
        }
        Ok(())
    })?;
    Ok(out)
}
