//! The three invertible step types. Each works on one sample laid out as
//! (channels, height*width) and reads its parameters from the model's flat
//! parameter list starting at `base`.

use super::conv::{conv_backward, conv_forward, ConvGeom};
use super::linalg;
use crate::numerics::{Real, Tensor};

/// Per-channel affine map `y = (x + bias) * exp(log_scale)`.
#[derive(Debug, Clone)]
pub(crate) struct ActNorm {
    pub base: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl ActNorm {
    pub const BIAS: usize = 0;
    pub const LOG_SCALE: usize = 1;

    pub fn forward<T: Real>(&self, p: &[Tensor<T>], x: &[T], y: &mut [T]) -> f64 {
        let bias = p[self.base + Self::BIAS].as_slice();
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        let hw = self.spatial;
        for c in 0..self.channels {
            let (b, e) = (bias[c], ls[c].exp());
            for (o, &v) in y[c * hw..(c + 1) * hw].iter_mut().zip(&x[c * hw..(c + 1) * hw]) {
                *o = (v + b) * e;
            }
        }
        hw as f64 * ls.iter().map(|v| v.as_f64()).sum::<f64>()
    }

    pub fn backward<T: Real>(&self, p: &[Tensor<T>], x: &[T], dy: &[T], dx: &mut [T], g: &mut [Vec<T>]) {
        let bias = p[self.base + Self::BIAS].as_slice();
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        let hw = self.spatial;
        let hw_t = T::of(hw as f64);
        for c in 0..self.channels {
            let e = ls[c].exp();
            let mut db = T::zero();
            let mut dls = T::zero();
            for j in c * hw..(c + 1) * hw {
                let y = (x[j] + bias[c]) * e;
                dx[j] = dy[j] * e;
                db += dy[j] * e;
                dls += dy[j] * y;
            }
            g[self.base + Self::BIAS][c] += db;
            g[self.base + Self::LOG_SCALE][c] += dls + hw_t;
        }
    }

    pub fn inverse<T: Real>(&self, p: &[Tensor<T>], y: &[T], x: &mut [T]) {
        let bias = p[self.base + Self::BIAS].as_slice();
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        let hw = self.spatial;
        for c in 0..self.channels {
            let (b, e) = (bias[c], (-ls[c]).exp());
            for (o, &v) in x[c * hw..(c + 1) * hw].iter_mut().zip(&y[c * hw..(c + 1) * hw]) {
                *o = v * e - b;
            }
        }
    }
}

/// Packed index of the strictly-lower entry (r, c), r > c.
#[inline]
pub(crate) fn tri_index(r: usize, c: usize) -> usize {
    r * (r - 1) / 2 + c
}

/// Invertible 1x1 convolution `W = P L (U + diag(sign * exp(log_scale)))`.
///
/// `row_of[i]` selects the row of `L U~` that forms row `i` of `W`; it and
/// `sign` are fixed at construction.
#[derive(Debug, Clone)]
pub(crate) struct InvMix {
    pub base: usize,
    pub channels: usize,
    pub spatial: usize,
    pub row_of: Vec<usize>,
    pub sign: Vec<f64>,
}

/// Dense matrices materialized from an [`InvMix`]'s parameters.
#[derive(Debug, Clone)]
pub(crate) struct MixMatrices<T> {
    pub w: Vec<T>,
    pub w_inv: Vec<T>,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl InvMix {
    pub const LOWER: usize = 0;
    pub const UPPER: usize = 1;
    pub const LOG_SCALE: usize = 2;

    pub fn matrices<T: Real>(&self, p: &[Tensor<T>]) -> MixMatrices<T> {
        let n = self.channels;
        let lower = p[self.base + Self::LOWER].as_slice();
        let upper = p[self.base + Self::UPPER].as_slice();
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        let mut l = vec![0.0; n * n];
        let mut u = vec![0.0; n * n];
        for r in 0..n {
            l[r * n + r] = 1.0;
            u[r * n + r] = self.sign[r] * ls[r].as_f64().exp();
            for c in 0..r {
                l[r * n + c] = lower[tri_index(r, c)].as_f64();
                u[c * n + r] = upper[tri_index(r, c)].as_f64();
            }
        }
        let lu = linalg::matmul(&l, &u, n);
        let mut w = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = T::of(lu[self.row_of[i] * n + j]);
            }
        }
        // W^-1 = U~^-1 L^-1 P^T, and (P^T y)[k] = y[i] where row_of[i] = k.
        let ul = linalg::matmul(&linalg::invert_upper(&u, n), &linalg::invert_lower(&l, n), n);
        let mut w_inv = vec![T::zero(); n * n];
        for r in 0..n {
            for i in 0..n {
                w_inv[r * n + i] = T::of(ul[r * n + self.row_of[i]]);
            }
        }
        MixMatrices { w, w_inv, l, u }
    }

    fn apply<T: Real>(&self, m: &[T], x: &[T], y: &mut [T]) {
        let (n, hw) = (self.channels, self.spatial);
        for o in 0..n {
            let yo = &mut y[o * hw..(o + 1) * hw];
            yo.fill(T::zero());
            for i in 0..n {
                let wv = m[o * n + i];
                for (d, &s) in yo.iter_mut().zip(&x[i * hw..(i + 1) * hw]) {
                    *d += wv * s;
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, p: &[Tensor<T>], m: &MixMatrices<T>, x: &[T], y: &mut [T]) -> f64 {
        self.apply(&m.w, x, y);
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        self.spatial as f64 * ls.iter().map(|v| v.as_f64()).sum::<f64>()
    }

    pub fn backward<T: Real>(
        &self,
        p: &[Tensor<T>],
        m: &MixMatrices<T>,
        x: &[T],
        dy: &[T],
        dx: &mut [T],
        g: &mut [Vec<T>],
    ) {
        let (n, hw) = (self.channels, self.spatial);
        dx.iter_mut().for_each(|v| *v = T::zero());
        // dW[o, i] = sum_p dy[o, p] x[i, p]; dx = W^T dy
        let mut gmat = vec![0.0f64; n * n];
        for o in 0..n {
            let dyo = &dy[o * hw..(o + 1) * hw];
            for i in 0..n {
                let xi = &x[i * hw..(i + 1) * hw];
                let mut acc = T::zero();
                for (&a, &b) in dyo.iter().zip(xi) {
                    acc += a * b;
                }
                // d(L U~) row row_of[o] receives dW row o
                gmat[self.row_of[o] * n + i] = acc.as_f64();
                let wv = m.w[o * n + i];
                for (d, &a) in dx[i * hw..(i + 1) * hw].iter_mut().zip(dyo) {
                    *d += wv * a;
                }
            }
        }
        let ls = p[self.base + Self::LOG_SCALE].as_slice();
        // dL = G U~^T (strict lower), dU~ = L^T G (upper incl. diagonal)
        for r in 0..n {
            for c in 0..r {
                let dl: f64 = (0..n).map(|k| gmat[r * n + k] * m.u[c * n + k]).sum();
                g[self.base + Self::LOWER][tri_index(r, c)] += T::of(dl);
                let du: f64 = (0..n).map(|k| m.l[k * n + c] * gmat[k * n + r]).sum();
                g[self.base + Self::UPPER][tri_index(r, c)] += T::of(du);
            }
            let dd: f64 = (0..n).map(|k| m.l[k * n + r] * gmat[k * n + r]).sum();
            let dls = dd * self.sign[r] * ls[r].as_f64().exp() + hw as f64;
            g[self.base + Self::LOG_SCALE][r] += T::of(dls);
        }
    }

    pub fn inverse<T: Real>(&self, m: &MixMatrices<T>, y: &[T], x: &mut [T]) {
        self.apply(&m.w_inv, y, x);
    }
}

/// Affine coupling: the transformed half is scaled by `exp(s)` and shifted by
/// `t`, both produced by a three-layer network of the conditioning half.
/// `s = clamp * tanh(raw / clamp)`.
#[derive(Debug, Clone)]
pub(crate) struct Coupling {
    pub base: usize,
    pub cond: Vec<usize>,
    pub trans: Vec<usize>,
    pub l1: ConvGeom,
    pub l2: ConvGeom,
    pub l3: ConvGeom,
    pub clamp: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CouplingCache<T> {
    xa: Vec<T>,
    xb: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    s: Vec<T>,
}

impl Coupling {
    pub const W1: usize = 0;
    pub const B1: usize = 1;
    pub const W2: usize = 2;
    pub const B2: usize = 3;
    pub const W3: usize = 4;
    pub const B3: usize = 5;

    fn net<T: Real>(&self, p: &[Tensor<T>], xa: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let w = |k: usize| p[self.base + k].as_slice();
        let mut h1 = vec![T::zero(); self.l1.out_len()];
        conv_forward(&self.l1, xa, w(Self::W1), w(Self::B1), &mut h1);
        relu(&mut h1);
        let mut h2 = vec![T::zero(); self.l2.out_len()];
        conv_forward(&self.l2, &h1, w(Self::W2), w(Self::B2), &mut h2);
        relu(&mut h2);
        let mut out = vec![T::zero(); self.l3.out_len()];
        conv_forward(&self.l3, &h2, w(Self::W3), w(Self::B3), &mut out);
        (h1, h2, out)
    }

    pub fn forward<T: Real>(&self, p: &[Tensor<T>], x: &[T], y: &mut [T], cache: Option<&mut CouplingCache<T>>) -> f64 {
        let xa: Vec<T> = self.cond.iter().map(|&i| x[i]).collect();
        let xb: Vec<T> = self.trans.iter().map(|&i| x[i]).collect();
        let (h1, h2, out) = self.net(p, &xa);
        let nb = self.trans.len();
        let clamp = T::of(self.clamp);
        let mut s = vec![T::zero(); nb];
        let mut logdet = 0.0;
        y.copy_from_slice(x);
        for j in 0..nb {
            let sj = clamp * (out[j] / clamp).tanh();
            s[j] = sj;
            logdet += sj.as_f64();
            y[self.trans[j]] = xb[j] * sj.exp() + out[nb + j];
        }
        if let Some(c) = cache {
            *c = CouplingCache { xa, xb, h1, h2, s };
        }
        logdet
    }

    pub fn backward<T: Real>(
        &self,
        p: &[Tensor<T>],
        cache: &CouplingCache<T>,
        dy: &[T],
        dx: &mut [T],
        g: &mut [Vec<T>],
    ) {
        let nb = self.trans.len();
        let clamp = T::of(self.clamp);
        let mut dout = vec![T::zero(); 2 * nb];
        dx.copy_from_slice(dy);
        for j in 0..nb {
            let e = cache.s[j].exp();
            let dyb = dy[self.trans[j]];
            dx[self.trans[j]] = dyb * e;
            let ds = dyb * cache.xb[j] * e + T::one();
            let th = cache.s[j] / clamp;
            dout[j] = ds * (T::one() - th * th);
            dout[nb + j] = dyb;
        }
        let w = |k: usize| p[self.base + k].as_slice();
        let (gw3, gb3) = pair_mut(g, self.base + Self::W3);
        let mut dh2 = vec![T::zero(); self.l2.out_len()];
        conv_backward(&self.l3, &cache.h2, w(Self::W3), &dout, Some(&mut dh2), gw3, gb3);
        relu_mask(&mut dh2, &cache.h2);
        let (gw2, gb2) = pair_mut(g, self.base + Self::W2);
        let mut dh1 = vec![T::zero(); self.l1.out_len()];
        conv_backward(&self.l2, &cache.h1, w(Self::W2), &dh2, Some(&mut dh1), gw2, gb2);
        relu_mask(&mut dh1, &cache.h1);
        let (gw1, gb1) = pair_mut(g, self.base + Self::W1);
        let mut dxa = vec![T::zero(); self.l1.in_len()];
        conv_backward(&self.l1, &cache.xa, w(Self::W1), &dh1, Some(&mut dxa), gw1, gb1);
        for (&i, &d) in self.cond.iter().zip(&dxa) {
            dx[i] += d;
        }
    }

    pub fn inverse<T: Real>(&self, p: &[Tensor<T>], y: &[T], x: &mut [T]) {
        let ya: Vec<T> = self.cond.iter().map(|&i| y[i]).collect();
        let (_, _, out) = self.net(p, &ya);
        let nb = self.trans.len();
        let clamp = T::of(self.clamp);
        x.copy_from_slice(y);
        for j in 0..nb {
            let s = clamp * (out[j] / clamp).tanh();
            x[self.trans[j]] = (y[self.trans[j]] - out[nb + j]) * (-s).exp();
        }
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn relu_mask<T: Real>(d: &mut [T], activated: &[T]) {
    for (g, &a) in d.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Mutable views of two adjacent gradient buffers (weight at `i`, bias at `i + 1`).
fn pair_mut<T>(g: &mut [Vec<T>], i: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = g[i..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
