use serde::{Deserialize, Serialize};

use crate::datasets::{DataSource, ImageBatch};
use crate::error::{Error, Result};
use crate::numerics::{derive_stream, SeededRng};

/// Number of samples drawn per dataset for evaluation.
pub const DEFAULT_EVAL_SAMPLES: usize = 1000;

const SPLIT_TAG: u64 = 0x5350_4c54;
const EVAL_TAG: u64 = 0x4556_414c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Fit,
    Test,
}

/// A dataset source restricted to a set of positions within it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub source: DataSource,
    pub split: Split,
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl DatasetHandle {
    pub fn full(source: DataSource, len: usize, seed: u64) -> Self {
        DatasetHandle {
            source,
            split: Split::Full,
            indices: (0..len).collect(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Rows of `data` (the whole source) that belong to this handle.
    pub fn materialize(&self, data: &ImageBatch) -> Result<ImageBatch> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Shape(format!("index {bad} outside dataset of {}", data.len())));
        }
        Ok(data.select(&self.indices))
    }
}

/// Seeded train / fit / test partition. The first two sizes are
/// `round(fraction * n)`; the test split takes the remainder.
pub fn make_splits(
    handle: &DatasetHandle,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(DatasetHandle, DatasetHandle, DatasetHandle)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = handle.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_fit = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_fit;
    if n_train == 0 || n_fit == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} items by {fractions:?} leaves an empty split ({n_train}, {n_fit}, {n_test})"
        )));
    }
    let mut rng = SeededRng::new(seed, derive_stream(SPLIT_TAG, 0, 0));
    let perm: Vec<usize> = rng.permutation(n).into_iter().map(|p| handle.indices[p]).collect();
    let part = |split, range: std::ops::Range<usize>| DatasetHandle {
        source: handle.source.clone(),
        split,
        indices: perm[range].to_vec(),
        seed,
    };
    Ok((
        part(Split::Train, 0..n_train),
        part(Split::Fit, n_train..n_train + n_fit),
        part(Split::Test, n_train + n_fit..n),
    ))
}

/// `n` rows of `split` chosen without replacement, in seeded order.
pub fn sample_eval_set(split: &ImageBatch, n: usize, seed: u64) -> Result<ImageBatch> {
    if n > split.len() {
        return Err(Error::InsufficientData(format!(
            "requested {n} evaluation samples from a split of {}",
            split.len()
        )));
    }
    let mut rng = SeededRng::new(seed, derive_stream(EVAL_TAG, 0, 0));
    let perm = rng.permutation(split.len());
    Ok(split.select(&perm[..n]))
}
