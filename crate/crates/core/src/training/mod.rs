//! Maximum-likelihood training with Adam, epoch checkpoints and the binary
//! checkpoint format.

mod adam;
mod checkpoint;
mod config;
mod trainer;

pub use adam::{adam_step, AdamParams, OptimizerState};
pub use checkpoint::{
    checkpoint_file_name, decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint_header,
    save_checkpoint, Checkpoint, CheckpointHeader, LayerEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{default_checkpoint_epochs, AdamConfig, TrainConfig, SWEEP_CHECKPOINT_EPOCHS};
pub use trainer::{train, EpochReport, Trainer};
