//! Image data: quantized batches, IDX files, synthetic families, splits.

mod batch;
mod idx;
mod source;
mod splits;
mod synth;

pub use batch::{export_raw, ImageBatch};
pub use idx::{encode_idx, load_idx, parse_idx, write_idx};
pub use source::DataSource;
pub use splits::{make_splits, sample_eval_set, DatasetHandle, Split, DEFAULT_EVAL_SAMPLES};
pub use synth::{synth_generate, SyntheticFamily, SyntheticSpec};
