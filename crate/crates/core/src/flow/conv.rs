//! "Same"-padded 2-D convolution over (channels, height, width) slices.
//! A 1x1 kernel on a 1x1 image is a dense linear layer.
//!
//! Images here are tiny (at most a few dozen pixels), so the kernels go
//! through an im2col patch matrix and long contiguous dot products instead
//! of looping over short image rows.

use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    /// Odd kernel size.
    pub kernel: usize,
}

impl ConvGeom {
    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.height * self.width
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    /// Calls `f(patch_offset, image_offset)` for every in-bounds tap of pixel (y, x).
    #[inline]
    fn taps(&self, y: usize, x: usize, mut f: impl FnMut(usize, usize)) {
        let (h, w, k) = (self.height as isize, self.width as isize, self.kernel);
        let pad = (k / 2) as isize;
        for i in 0..self.cin {
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w {
                        continue;
                    }
                    f((i * k + ky) * k + kx, i * (h * w) as usize + (iy * w + ix) as usize);
                }
            }
        }
    }
}

/// Patch matrix with one row per output pixel.
fn im2col<T: Real>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let kk = g.patch_len();
    let mut col = vec![T::zero(); g.height * g.width * kk];
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &mut col[(y * g.width + x) * kk..][..kk];
            g.taps(y, x, |j, src| row[j] = input[src]);
        }
    }
    col
}

fn col2im_add<T: Real>(g: &ConvGeom, col: &[T], din: &mut [T]) {
    let kk = g.patch_len();
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &col[(y * g.width + x) * kk..][..kk];
            g.taps(y, x, |j, dst| din[dst] += row[j]);
        }
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += alpha * s;
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let hw = g.height * g.width;
    let kk = g.patch_len();
    let col = im2col(g, input);
    for o in 0..g.cout {
        let w_o = &weight[o * kk..(o + 1) * kk];
        for p in 0..hw {
            out[o * hw + p] = bias[o] + dot(w_o, &col[p * kk..(p + 1) * kk]);
        }
    }
}

/// Accumulates weight/bias gradients and, when `din` is given, the input gradient.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    dout: &[T],
    din: Option<&mut [T]>,
    dweight: &mut [T],
    dbias: &mut [T],
) {
    let hw = g.height * g.width;
    let kk = g.patch_len();
    let col = im2col(g, input);
    let mut dcol = if din.is_some() {
        vec![T::zero(); hw * kk]
    } else {
        Vec::new()
    };
    for o in 0..g.cout {
        let d_o = &dout[o * hw..(o + 1) * hw];
        let w_o = &weight[o * kk..(o + 1) * kk];
        let dw_o = &mut dweight[o * kk..(o + 1) * kk];
        let mut db = T::zero();
        for (p, &d) in d_o.iter().enumerate() {
            db += d;
            if d == T::zero() {
                continue;
            }
            axpy(d, &col[p * kk..(p + 1) * kk], dw_o);
            if !dcol.is_empty() {
                axpy(d, w_o, &mut dcol[p * kk..(p + 1) * kk]);
            }
        }
        dbias[o] += db;
    }
    if let Some(din) = din {
        col2im_add(g, &dcol, din);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn naive(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, w, k) = (g.height as isize, g.width as isize, g.kernel as isize);
        let pad = k / 2;
        let mut out = vec![0.0; g.out_len()];
        for o in 0..g.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..g.cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (y + ky - pad, x + kx - pad);
                                if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                    continue;
                                }
                                let wv = weight[((o * g.cin + i) * g.kernel + ky as usize) * g.kernel + kx as usize];
                                acc += wv * input[i * g.height * g.width + (iy * w + ix) as usize];
                            }
                        }
                    }
                    out[o * g.height * g.width + (y * w + x) as usize] = acc;
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = SeededRng::new(3, 0);
        for g in [
            ConvGeom {
                cin: 2,
                cout: 3,
                height: 4,
                width: 5,
                kernel: 3,
            },
            ConvGeom {
                cin: 3,
                cout: 2,
                height: 1,
                width: 1,
                kernel: 1,
            },
            ConvGeom {
                cin: 1,
                cout: 2,
                height: 2,
                width: 2,
                kernel: 3,
            },
            ConvGeom {
                cin: 11,
                cout: 4,
                height: 3,
                width: 3,
                kernel: 1,
            },
        ] {
            let input = rand_vec(&mut rng, g.in_len());
            let weight = rand_vec(&mut rng, g.weight_len());
            let bias = rand_vec(&mut rng, g.cout);
            let mut out = vec![0.0; g.out_len()];
            conv_forward(&g, &input, &weight, &bias, &mut out);
            let reference = naive(&g, &input, &weight, &bias);
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dout, conv(x)> is linear in x, w and b; its gradients are the backward outputs.
        let g = ConvGeom {
            cin: 2,
            cout: 3,
            height: 3,
            width: 4,
            kernel: 3,
        };
        let mut rng = SeededRng::new(8, 0);
        let input = rand_vec(&mut rng, g.in_len());
        let weight = rand_vec(&mut rng, g.weight_len());
        let bias = rand_vec(&mut rng, g.cout);
        let dout = rand_vec(&mut rng, g.out_len());
        let mut din = vec![0.0; g.in_len()];
        let mut dw = vec![0.0; g.weight_len()];
        let mut db = vec![0.0; g.cout];
        conv_backward(&g, &input, &weight, &dout, Some(&mut din), &mut dw, &mut db);
        let f =
            |x: &[f64], w: &[f64], b: &[f64]| -> f64 { naive(&g, x, w, b).iter().zip(&dout).map(|(a, d)| a * d).sum() };
        let h = 1e-6;
        for j in 0..g.in_len() {
            let (mut p, mut m) = (input.clone(), input.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (f(&p, &weight, &bias) - f(&m, &weight, &bias)) / (2.0 * h);
            assert!((fd - din[j]).abs() < 1e-6);
        }
        for j in 0..g.weight_len() {
            let (mut p, mut m) = (weight.clone(), weight.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (f(&input, &p, &bias) - f(&input, &m, &bias)) / (2.0 * h);
            assert!((fd - dw[j]).abs() < 1e-6);
        }
        for j in 0..g.cout {
            let (mut p, mut m) = (bias.clone(), bias.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (f(&input, &weight, &p) - f(&input, &weight, &m)) / (2.0 * h);
            assert!((fd - db[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_accumulates_and_skips_input_gradient() {
        let g = ConvGeom {
            cin: 2,
            cout: 2,
            height: 2,
            width: 3,
            kernel: 3,
        };
        let mut rng = SeededRng::new(9, 0);
        let input = rand_vec(&mut rng, g.in_len());
        let weight = rand_vec(&mut rng, g.weight_len());
        let dout = rand_vec(&mut rng, g.out_len());
        let mut dw1 = vec![0.0; g.weight_len()];
        let mut db1 = vec![0.0; g.cout];
        conv_backward(&g, &input, &weight, &dout, None, &mut dw1, &mut db1);
        let mut dw2 = dw1.clone();
        let mut db2 = db1.clone();
        conv_backward(&g, &input, &weight, &dout, None, &mut dw2, &mut db2);
        for (a, b) in dw1.iter().chain(&db1).zip(dw2.iter().chain(&db2)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
