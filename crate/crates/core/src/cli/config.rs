//! Flat experiment configuration.
//!
//! A config file is a TOML document with top-level keys only. Every key has
//! a default taken from the chosen preset; the fully resolved table is
//! echoed to `<out>/resolved-config`.
//!
//! ```toml
//! preset = "glow-desk"
//! id_data = "synthetic:flat-blob"
//! ood_data = ["synthetic:white-noise", "synthetic:correlated-field"]
//! epochs = 50
//! b = [1, 5]
//! ```

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{make_splits, DataSource, DatasetHandle, ImageBatch, Split, DEFAULT_EVAL_SAMPLES};
use crate::error::{Error, Result};
use crate::flow::{CouplingKind, FlowConfig};
use crate::numerics::Precision;
use crate::scoring::{ScoreKind, SigmaConvention, DEFAULT_EPSILON};
use crate::training::{default_checkpoint_epochs, TrainConfig};

/// Every setting of an experiment. Field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub precision: Precision,
    pub blocks: usize,
    pub steps_per_block: usize,
    pub hidden_channels: usize,
    pub coupling: CouplingKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,

    /// `synthetic:<family>` or `idx:<path>`.
    pub id_data: String,
    pub ood_data: Vec<String>,
    /// Images generated per synthetic source before splitting.
    pub n_synthetic: usize,
    pub data_seed: u64,
    pub split_train: f64,
    pub split_fit: f64,
    pub split_test: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Empty means the default sweep epochs up to `epochs`.
    pub checkpoint_epochs: Vec<usize>,
    pub seed: u64,
    /// 0 disables clipping.
    pub grad_clip_norm: f64,

    pub b: Vec<usize>,
    pub kinds: Vec<ScoreKind>,
    pub epsilon: f64,
    /// Maximum number of fit groups; 0 uses all of them.
    pub n_fit: usize,
    pub sigma_convention: SigmaConvention,
    /// Fit the Gaussians on the evaluation split itself.
    pub fit_equals_test: bool,
    pub n_eval: usize,
    pub bins: usize,
    pub score_seed: u64,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let f = FlowConfig::preset(name)?;
        let t = TrainConfig::preset(name)?;
        let (id_data, ood_data) = match f.image_shape[0] {
            1 => (
                "synthetic:flat-blob",
                vec!["synthetic:white-noise", "synthetic:correlated-field"],
            ),
            _ => ("synthetic:flat-blob", vec!["synthetic:white-noise"]),
        };
        Ok(ExperimentConfig {
            preset: name.to_string(),
            precision: f.precision,
            blocks: f.blocks,
            steps_per_block: f.steps_per_block,
            hidden_channels: f.hidden_channels,
            coupling: f.coupling,
            channels: f.image_shape[0],
            height: f.image_shape[1],
            width: f.image_shape[2],
            id_data: id_data.into(),
            ood_data: ood_data.into_iter().map(String::from).collect(),
            n_synthetic: 4000,
            data_seed: 0,
            split_train: 0.5,
            split_fit: 0.25,
            split_test: 0.25,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            checkpoint_epochs: Vec::new(),
            seed: t.seed,
            grad_clip_norm: t.grad_clip_norm.unwrap_or(0.0),
            b: vec![1, 5],
            kinds: vec![ScoreKind::GradientAggregate],
            epsilon: DEFAULT_EPSILON,
            n_fit: 0,
            sigma_convention: SigmaConvention::Variance,
            fit_equals_test: false,
            n_eval: DEFAULT_EVAL_SAMPLES,
            bins: 100,
            score_seed: 0,
        })
    }

    /// Preset defaults, then `file`, then `overrides`. The preset is taken
    /// from the overrides, else the file, else `glow-desk`.
    pub fn resolve(file: Option<&toml::Table>, overrides: &toml::Table) -> Result<Self> {
        let preset = [Some(overrides), file]
            .into_iter()
            .flatten()
            .find_map(|t| t.get("preset"))
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config("preset must be a string".into()))
            })
            .transpose()?
            .unwrap_or_else(|| "glow-desk".into());
        let mut table = toml::Table::try_from(Self::preset(&preset)?)
            .map_err(|e| Error::Config(format!("defaults do not serialize: {e}")))?;
        for layer in [file, Some(overrides)].into_iter().flatten() {
            for (k, v) in layer {
                if !table.contains_key(k) {
                    return Err(Error::Config(format!("unknown config key `{k}`")));
                }
                table.insert(k.clone(), v.clone());
            }
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &toml::Table) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        Self::resolve(Some(&file), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.flow_config()?;
        self.train_config()?;
        DataSource::from_str(&self.id_data)?;
        for s in &self.ood_data {
            DataSource::from_str(s)?;
        }
        if self.b.is_empty() || self.b.contains(&0) {
            return Err(Error::Config(format!("b must list group sizes >= 1, got {:?}", self.b)));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("kinds must not be empty".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.bins == 0 || self.n_eval == 0 || self.n_synthetic == 0 {
            return Err(Error::Config("bins, n_eval and n_synthetic must be >= 1".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            blocks: self.blocks,
            steps_per_block: self.steps_per_block,
            hidden_channels: self.hidden_channels,
            coupling: self.coupling,
            image_shape: self.image_shape(),
            precision: self.precision,
            ..FlowConfig::preset(&self.preset)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            checkpoint_epochs: if self.checkpoint_epochs.is_empty() {
                default_checkpoint_epochs(self.epochs)
            } else {
                self.checkpoint_epochs.clone()
            },
            seed: self.seed,
            grad_clip_norm: (self.grad_clip_norm > 0.0).then_some(self.grad_clip_norm),
            ..TrainConfig::preset(&self.preset)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.split_train, self.split_fit, self.split_test]
    }

    /// Fit-group cap handed to the scorer.
    pub fn fit_cap(&self) -> usize {
        if self.n_fit == 0 {
            usize::MAX
        } else {
            self.n_fit
        }
    }

    /// One split of a data source. Sources are loaded whole and partitioned
    /// with `data_seed`, so every command sees the same split.
    pub fn load_split(&self, source: &str, split: Split) -> Result<ImageBatch> {
        let src = DataSource::from_str(source)?;
        let full = src.load(self.image_shape(), self.n_synthetic, self.data_seed)?;
        if full.image_shape() != self.image_shape() {
            return Err(Error::Shape(format!(
                "{source} holds {:?} images, config expects {:?}",
                full.image_shape(),
                self.image_shape()
            )));
        }
        let handle = DatasetHandle::full(src, full.len(), self.data_seed);
        if split == Split::Full {
            return Ok(full);
        }
        let (train, fit, test) = make_splits(&handle, self.fractions(), self.data_seed)?;
        let part = match split {
            Split::Train => train,
            Split::Fit => fit,
            _ => test,
        };
        part.materialize(&full)
    }
}

/// Label of a data source for file names and report rows.
pub fn source_label(source: &str) -> Result<String> {
    Ok(DataSource::from_str(source)?.label())
}
