use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Lays `images` (n, c, h, w) with values in [0, 1] out on a grid with a
/// one-pixel black gutter and encodes it as binary PGM (P5, maxval 255).
/// Multi-channel images are averaged over channels.
pub fn encode_pgm_grid<T: Real>(images: &Tensor<T>, cols: usize) -> Result<Vec<u8>> {
    let &[n, c, h, w] = images.shape() else {
        return Err(Error::Shape(format!("expected (n, c, h, w), got {:?}", images.shape())));
    };
    if n == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "grid needs at least one image and one column".into(),
        ));
    }
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut pix = vec![0u8; gw * gh];
    for k in 0..n {
        let img = images.row(k);
        let (oy, ox) = ((k / cols) * (h + 1) + 1, (k % cols) * (w + 1) + 1);
        for y in 0..h {
            for x in 0..w {
                let v: f64 = (0..c).map(|ch| img[ch * h * w + y * w + x].as_f64()).sum::<f64>() / c as f64;
                pix[(oy + y) * gw + ox + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend_from_slice(&pix);
    Ok(out)
}

pub fn write_pgm_grid<T: Real>(images: &Tensor<T>, cols: usize, path: &Path) -> Result<()> {
    let bytes = encode_pgm_grid(images, cols)?;
    crate::fsutil::write_atomic(path, &bytes)
}
