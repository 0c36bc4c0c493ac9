use serde::{Deserialize, Serialize};

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::numerics::{derive_stream, SeededRng};

const SYNTH_TAG: u64 = 0x5359_4e54;

/// Synthetic image families ordered from simple to complex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SyntheticFamily {
    /// One gray level per image, drawn uniformly from `[low, high]`, plus
    /// iid Gaussian pixel noise of `noise_sd` quantization steps.
    FlatBlob { low: f64, high: f64, noise_sd: f64 },
    /// Gaussian random field: iid noise smoothed by a periodic Gaussian kernel
    /// of width `length` pixels, rescaled to unit variance, then mapped to
    /// `mean + amplitude * field`.
    CorrelatedField { length: f64, mean: f64, amplitude: f64 },
    /// iid uniform pixels over all levels.
    WhiteNoise,
}

impl SyntheticFamily {
    pub fn flat_blob() -> Self {
        SyntheticFamily::FlatBlob {
            low: 0.0,
            high: 255.0,
            noise_sd: 4.0,
        }
    }

    pub fn correlated_field(length: f64) -> Self {
        SyntheticFamily::CorrelatedField {
            length,
            mean: 127.5,
            amplitude: 40.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticFamily::FlatBlob { .. } => "flat-blob",
            SyntheticFamily::CorrelatedField { .. } => "correlated-field",
            SyntheticFamily::WhiteNoise => "white-noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: SyntheticFamily,
    /// (channels, height, width)
    pub image_shape: [usize; 3],
    pub levels: u32,
}

impl SyntheticSpec {
    pub fn new(family: SyntheticFamily, image_shape: [usize; 3]) -> Self {
        SyntheticSpec {
            family,
            image_shape,
            levels: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let top = (self.levels.max(2) - 1) as f64;
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 2 || self.levels > 65536 {
            return bad(format!("levels must lie in [2, 65536], got {}", self.levels));
        }
        if self.image_shape.contains(&0) {
            return bad(format!("empty image shape {:?}", self.image_shape));
        }
        match self.family {
            SyntheticFamily::FlatBlob { low, high, noise_sd } => {
                if !(0.0 <= low && low <= high && high <= top) {
                    return bad(format!(
                        "flat-blob needs 0 <= low <= high <= {top}, got [{low}, {high}]"
                    ));
                }
                if !(0.0..=64.0).contains(&noise_sd) {
                    return bad(format!("flat-blob noise_sd must lie in [0, 64], got {noise_sd}"));
                }
            }
            SyntheticFamily::CorrelatedField {
                length,
                mean,
                amplitude,
            } => {
                if !(0.0..=16.0).contains(&length) {
                    return bad(format!("correlated-field length must lie in [0, 16], got {length}"));
                }
                if !(0.0..=top).contains(&mean) || !(amplitude > 0.0 && amplitude <= top) {
                    return bad(format!(
                        "correlated-field mean/amplitude out of range: {mean}, {amplitude}"
                    ));
                }
            }
            SyntheticFamily::WhiteNoise => {}
        }
        Ok(())
    }

    /// Image `index` of the family under `seed`; a pure function of its inputs.
    pub fn generate_one(&self, index: usize, seed: u64) -> Vec<u16> {
        let [c, h, w] = self.image_shape;
        let mut rng = SeededRng::new(seed, derive_stream(SYNTH_TAG, index as u64, 0));
        let top = (self.levels - 1) as f64;
        let quantize = |v: f64| v.round().clamp(0.0, top) as u16;
        match self.family {
            SyntheticFamily::FlatBlob { low, high, noise_sd } => {
                let g = low + (high - low) * rng.uniform();
                (0..c * h * w).map(|_| quantize(g + noise_sd * rng.normal())).collect()
            }
            SyntheticFamily::CorrelatedField {
                length,
                mean,
                amplitude,
            } => {
                let noise: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
                let field = smooth_periodic(&noise, c, h, w, length);
                field.into_iter().map(|v| quantize(mean + amplitude * v)).collect()
            }
            SyntheticFamily::WhiteNoise => (0..c * h * w).map(|_| rng.below(self.levels as usize) as u16).collect(),
        }
    }
}

/// Circular Gaussian smoothing per channel, normalized so unit-variance iid
/// input yields unit-variance output.
fn smooth_periodic(x: &[f64], c: usize, h: usize, w: usize, length: f64) -> Vec<f64> {
    if length <= 0.0 {
        return x.to_vec();
    }
    let wrap = |d: usize, n: usize| d.min(n - d) as f64;
    let mut kernel = vec![0.0; h * w];
    for dy in 0..h {
        for dx in 0..w {
            let (ry, rx) = (wrap(dy, h), wrap(dx, w));
            kernel[dy * w + dx] = (-(ry * ry + rx * rx) / (2.0 * length * length)).exp();
        }
    }
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for dy in 0..h {
                    for dx in 0..w {
                        acc += kernel[dy * w + dx] * src[((y + dy) % h) * w + (xx + dx) % w];
                    }
                }
                out[ch * h * w + y * w + xx] = acc;
            }
        }
    }
    out
}

/// `n` images with sample ids `0..n`.
pub fn synth_generate(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<ImageBatch> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic batch needs n >= 1".into()));
    }
    let [c, h, w] = spec.image_shape;
    let mut pixels = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        pixels.extend(spec.generate_one(i, seed));
    }
    ImageBatch::new(
        [n, c, h, w],
        pixels,
        spec.levels,
        (0..n).collect(),
        format!("synthetic:{}", spec.family.name()),
    )
}
