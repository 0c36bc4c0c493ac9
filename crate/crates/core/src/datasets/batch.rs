use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{derive_stream, Real, SeededRng, Tensor};

/// Quantized images of shape (n, channels, height, width) with pixel values
/// in `[0, levels - 1]`. Every row carries a stable sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    shape: [usize; 4],
    pixels: Vec<u16>,
    levels: u32,
    ids: Vec<usize>,
    source: String,
}

impl ImageBatch {
    pub fn new(
        shape: [usize; 4],
        pixels: Vec<u16>,
        levels: u32,
        ids: Vec<usize>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let [n, c, h, w] = shape;
        if n == 0 {
            return Err(Error::InsufficientData(
                "image batch must hold at least one image".into(),
            ));
        }
        if pixels.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "{} pixels do not fill shape {shape:?}",
                pixels.len()
            )));
        }
        if ids.len() != n {
            return Err(Error::Shape(format!("{} ids for {n} images", ids.len())));
        }
        if levels < 2 {
            return Err(Error::InvalidArgument("levels must be >= 2".into()));
        }
        if let Some(p) = pixels.iter().find(|&&p| p as u32 >= levels) {
            return Err(Error::Domain(format!("pixel {p} outside [0, {}]", levels - 1)));
        }
        Ok(ImageBatch {
            shape,
            pixels,
            levels,
            ids,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[u16] {
        let k = self.shape[1] * self.shape[2] * self.shape[3];
        &self.pixels[i * k..(i + 1) * k]
    }

    /// Rows at `positions` (positions into this batch, not sample ids).
    pub fn select(&self, positions: &[usize]) -> ImageBatch {
        let k = self.shape[1] * self.shape[2] * self.shape[3];
        let mut pixels = Vec::with_capacity(positions.len() * k);
        for &p in positions {
            pixels.extend_from_slice(self.image(p));
        }
        ImageBatch {
            shape: [positions.len(), self.shape[1], self.shape[2], self.shape[3]],
            pixels,
            levels: self.levels,
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            source: self.source.clone(),
        }
    }

    /// Uniform dequantization `(q + u) / S`, `u ~ U[0, 1)`. The noise of each
    /// row is drawn from stream `(seed, tag, sample id)`, so it does not
    /// depend on which other rows share the batch.
    pub fn dequantize<T: Real>(&self, seed: u64, tag: u64) -> Tensor<T> {
        let k = self.shape[1] * self.shape[2] * self.shape[3];
        let s = self.levels as f64;
        let mut out = Vec::with_capacity(self.pixels.len());
        for (row, &id) in self.ids.iter().enumerate() {
            let mut rng = SeededRng::new(seed, derive_stream(tag, id as u64, 0));
            for &q in &self.pixels[row * k..(row + 1) * k] {
                out.push(T::of((q as f64 + rng.uniform()) / s));
            }
        }
        Tensor::from_vec(&self.shape, out).expect("batch shape")
    }
}

#[derive(Serialize)]
struct RawSidecar<'a> {
    shape: [usize; 4],
    dtype: &'static str,
    levels: u32,
    source: &'a str,
}

/// Writes raw little-endian u8 pixels to `path` and a one-line JSON sidecar
/// to `path` + `.json`. Requires `levels <= 256`.
pub fn export_raw(batch: &ImageBatch, path: &Path) -> Result<()> {
    if batch.levels > 256 {
        return Err(Error::InvalidArgument("raw u8 export needs levels <= 256".into()));
    }
    let bytes: Vec<u8> = batch.pixels.iter().map(|&p| p as u8).collect();
    crate::fsutil::write_atomic(path, &bytes)?;
    let sidecar = RawSidecar {
        shape: batch.shape,
        dtype: "u8",
        levels: batch.levels,
        source: &batch.source,
    };
    let mut line = serde_json::to_string(&sidecar).expect("sidecar json");
    line.push('\n');
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    crate::fsutil::write_atomic(Path::new(&side), line.as_bytes())
}
