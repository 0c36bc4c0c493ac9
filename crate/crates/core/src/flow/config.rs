use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Precision, DEFAULT_LOGIT_ALPHA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    /// 3x3 / 1x1 / 3x3 convolutional network on a channel split after squeezing.
    Convolutional,
    /// Fully connected network on alternating even/odd flattened indices.
    Dense,
}

/// Architecture of a [`FlowModel`](super::FlowModel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub blocks: usize,
    pub steps_per_block: usize,
    pub hidden_channels: usize,
    pub coupling: CouplingKind,
    /// (channels, height, width)
    pub image_shape: [usize; 3],
    pub quantization_levels: u32,
    pub scale_clamp: f64,
    pub logit_alpha: f64,
    pub precision: Precision,
}

pub const PRESET_NAMES: [&str; 3] = ["glow-desk", "glow-1ch", "glow-3ch"];

impl FlowConfig {
    /// Named architecture presets.
    ///
    /// `glow-3ch` and `glow-1ch` are the full-size three- and one-channel
    /// configurations; `glow-desk` is small enough to train on a laptop CPU.
    pub fn preset(name: &str) -> Result<FlowConfig> {
        let base = FlowConfig {
            blocks: 2,
            steps_per_block: 4,
            hidden_channels: 64,
            coupling: CouplingKind::Convolutional,
            image_shape: [1, 8, 8],
            quantization_levels: 256,
            scale_clamp: 2.0,
            logit_alpha: DEFAULT_LOGIT_ALPHA,
            precision: Precision::F32,
        };
        let cfg = match name {
            "glow-desk" => base,
            "glow-3ch" => FlowConfig {
                blocks: 3,
                steps_per_block: 32,
                hidden_channels: 512,
                image_shape: [3, 32, 32],
                ..base
            },
            "glow-1ch" => FlowConfig {
                blocks: 1,
                steps_per_block: 10,
                hidden_channels: 1000,
                coupling: CouplingKind::Dense,
                image_shape: [1, 28, 28],
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.blocks == 0 || self.steps_per_block == 0 || self.hidden_channels == 0 {
            return fail("blocks, steps_per_block and hidden_channels must be >= 1".into());
        }
        let [c, h, w] = self.image_shape;
        if c == 0 || h == 0 || w == 0 {
            return fail(format!("empty image shape {:?}", self.image_shape));
        }
        match self.coupling {
            CouplingKind::Dense => {
                if self.blocks != 1 {
                    return fail("dense coupling requires blocks = 1".into());
                }
                if c * h * w < 2 {
                    return fail("dense coupling needs at least two dimensions".into());
                }
            }
            CouplingKind::Convolutional => {
                // every block starts with a 2x2 squeeze
                let f = 1usize << self.blocks;
                if h % f != 0 || w % f != 0 {
                    return fail(format!(
                        "height and width must be divisible by 2^blocks = {f}, got {h}x{w}"
                    ));
                }
            }
        }
        if self.quantization_levels < 2 {
            return fail("quantization_levels must be >= 2".into());
        }
        if !(self.logit_alpha > 0.0 && self.logit_alpha < 0.5) {
            return fail(format!("logit_alpha must lie in (0, 0.5), got {}", self.logit_alpha));
        }
        if !(self.scale_clamp > 0.0 && self.scale_clamp.is_finite()) {
            return fail(format!("scale_clamp must be positive, got {}", self.scale_clamp));
        }
        Ok(())
    }

    /// Number of pixel dimensions D.
    pub fn dims(&self) -> usize {
        self.image_shape.iter().product()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
