//! IDX image files: big-endian magic `0x00000803` (unsigned byte, rank 3),
//! three big-endian u32 extents, then raw pixels.

use std::path::Path;

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;

pub fn load_idx(path: &Path) -> Result<ImageBatch> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, &path.display().to_string())
}

pub fn parse_idx(bytes: &[u8], source: &str) -> Result<ImageBatch> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::format(bytes.len() as u64, "truncated IDX header"))
    };
    let magic = word(0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            0,
            format!("magic {magic:#010x} is not an unsigned-byte rank-3 image file ({IMAGE_MAGIC:#010x})"),
        ));
    }
    let (n, h, w) = (word(4)? as usize, word(8)? as usize, word(12)? as usize);
    let need = n * h * w;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("pixel data truncated: need {need} bytes, found {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format(16 + need as u64, "trailing bytes after pixel data"));
    }
    let pixels = body.iter().map(|&b| b as u16).collect();
    ImageBatch::new([n, 1, h, w], pixels, 256, (0..n).collect(), source)
}

/// IDX encoding of a single-channel batch with `levels <= 256`.
pub fn encode_idx(batch: &ImageBatch) -> Result<Vec<u8>> {
    let [n, c, h, w] = batch.shape();
    if c != 1 || batch.levels() > 256 {
        return Err(Error::InvalidArgument(
            "IDX images need one channel and levels <= 256".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(batch.pixels().iter().map(|&p| p as u8));
    Ok(out)
}

pub fn write_idx(batch: &ImageBatch, path: &Path) -> Result<()> {
    let bytes = encode_idx(batch)?;
    crate::fsutil::write_atomic(path, &bytes)
}
