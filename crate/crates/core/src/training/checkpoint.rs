//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! "GFCK" | version u32 | header_len u32 | header (UTF-8 JSON) | params | adam m | adam v
//! ```
//!
//! Each blob is every parameter tensor in layer order, elements in the
//! header's precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::{hex, FlowConfig, FlowModel, MixBuffer};
use crate::fsutil::write_atomic;
use crate::numerics::{Precision, Real, RngState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// File name of the checkpoint written after `epoch`, e.g. `epoch-0010.gfck`.
pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.gfck")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub epoch: usize,
    pub precision: Precision,
    pub config: FlowConfig,
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub layers: Vec<LayerEntry>,
    pub mix_buffers: Vec<MixBuffer>,
    pub initialized: bool,
    pub rng: RngState,
    /// Mean training BPD of each completed epoch.
    pub loss_history: Vec<f64>,
    pub adam_step: u64,
    pub data_source: String,
}

/// Complete training state after some epoch.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub model: FlowModel<T>,
    pub optimizer: OptimizerState<T>,
    pub rng: RngState,
    pub loss_history: Vec<f64>,
    pub train_config: TrainConfig,
    pub data_source: String,
}

impl<T: Real> Checkpoint<T> {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            epoch: self.epoch,
            precision: T::PRECISION,
            config: self.model.config().clone(),
            config_hash: self.model.config().hash(),
            train_config: self.train_config.clone(),
            layers: self
                .model
                .layers()
                .iter()
                .map(|l| LayerEntry {
                    name: l.name.clone(),
                    shape: l.shape.clone(),
                })
                .collect(),
            mix_buffers: self.model.mix_buffers(),
            initialized: self.model.is_initialized(),
            rng: self.rng.clone(),
            loss_history: self.loss_history.clone(),
            adam_step: self.optimizer.step,
            data_source: self.data_source.clone(),
        }
    }

    /// Hex SHA-256 of the parameter blob; identifies the model in score files.
    pub fn param_hash(&self) -> String {
        let mut blob = Vec::new();
        write_blob(self.model.params(), &mut blob);
        hex(&Sha256::digest(&blob))
    }
}

fn write_blob<T: Real>(tensors: &[Tensor<T>], out: &mut Vec<u8>) {
    for t in tensors {
        for &v in t.as_slice() {
            v.write_le(out);
        }
    }
}

pub fn encode_checkpoint<T: Real>(c: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&c.header())
        .map_err(|e| Error::Config(format!("checkpoint header does not serialize: {e}")))?;
    let n = c.model.num_params() * T::PRECISION.bytes();
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + 3 * n);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    write_blob(c.model.params(), &mut out);
    write_blob(&c.optimizer.m, &mut out);
    write_blob(&c.optimizer.v, &mut out);
    Ok(out)
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format(
            bytes.len() as u64,
            "file shorter than the 12-byte preamble",
        ));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:02x?}, expected \"GFCK\"", &bytes[..4]),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let end = PREAMBLE + hlen;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated header: declared {hlen} bytes, {} available",
                bytes.len() - PREAMBLE
            ),
        ));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::format(PREAMBLE as u64, format!("header JSON: {e}")))?;
    Ok((header, end))
}

/// Decodes and checks a checkpoint: element type, blob length, layer table
/// and config hash must all agree.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (h, start) = parse_header(bytes)?;
    if h.precision != T::PRECISION {
        return Err(Error::format(
            PREAMBLE as u64,
            format!("checkpoint stores {} values, {} requested", h.precision, T::PRECISION),
        ));
    }
    let sizes: Vec<usize> = h.layers.iter().map(|l| l.shape.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let width = T::PRECISION.bytes();
    let expected = 3 * total * width;
    let actual = bytes.len() - start;
    if actual != expected {
        return Err(Error::format(
            (start + actual.min(expected)) as u64,
            format!("header declares {expected} blob bytes, file has {actual}"),
        ));
    }
    if h.config.hash() != h.config_hash {
        return Err(Error::Consistency(format!(
            "config hash {} does not match stored {}",
            h.config.hash(),
            h.config_hash
        )));
    }
    let mut offset = start;
    let mut read_blob = || -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(sizes.len());
        for (layer, &n) in h.layers.iter().zip(&sizes) {
            let data: Vec<T> = bytes[offset..offset + n * width]
                .chunks_exact(width)
                .map(T::read_le)
                .collect();
            offset += n * width;
            out.push(Tensor::from_vec(&layer.shape, data)?);
        }
        Ok(out)
    };
    let params = read_blob()?;
    let m = read_blob()?;
    let v = read_blob()?;
    let model = FlowModel::from_parts(h.config.clone(), params, h.mix_buffers.clone(), h.initialized)
        .map_err(|e| Error::format(PREAMBLE as u64, format!("layer table does not match config: {e}")))?;
    for (stored, built) in h.layers.iter().zip(model.layers()) {
        if stored.name != built.name {
            return Err(Error::format(
                PREAMBLE as u64,
                format!("layer '{}' stored where '{}' expected", stored.name, built.name),
            ));
        }
    }
    Ok(Checkpoint {
        epoch: h.epoch,
        model,
        optimizer: OptimizerState {
            m,
            v,
            step: h.adam_step,
        },
        rng: h.rng,
        loss_history: h.loss_history,
        train_config: h.train_config,
        data_source: h.data_source,
    })
}

/// Writes through a temporary file and an atomic rename, so a crash never
/// leaves a partial checkpoint under `path`.
pub fn save_checkpoint<T: Real>(c: &Checkpoint<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(c)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Header only, for dispatching on precision before a typed load.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(&bytes).map(|(h, _)| h)
}
