use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const DEFAULT_LOGIT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct LogitOutput<T> {
    pub y: Tensor<T>,
    /// Per-sample log|det dy/dx| in nats (one entry per leading-axis row).
    pub logdet: Vec<f64>,
}

/// `y = logit(alpha + (1 - 2 alpha) x)` applied to every element of `x`.
///
/// The leading axis is the sample axis; `logdet[i]` sums the elementwise
/// log-derivatives of row `i`.
pub fn logit_preprocess<T: Real>(x: &Tensor<T>, alpha: f64) -> Result<LogitOutput<T>> {
    check_alpha(alpha)?;
    let mut y = Tensor::zeros(x.shape());
    let mut logdet = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        logdet.push(logit_row(x.row(i), alpha, y.row_mut(i))?);
    }
    Ok(LogitOutput { y, logdet })
}

pub(crate) fn logit_row<T: Real>(x: &[T], alpha: f64, out: &mut [T]) -> Result<f64> {
    let scale = 1.0 - 2.0 * alpha;
    let ln_scale = scale.ln();
    let mut logdet = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let v = v.as_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        let s = alpha + scale * v;
        let (ls, l1s) = (s.ln(), (1.0 - s).ln());
        *o = T::of(ls - l1s);
        logdet += ln_scale - ls - l1s;
    }
    Ok(logdet)
}

/// Inverse of [`logit_preprocess`]. Values are not clamped.
pub fn logit_inverse<T: Real>(y: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let mut x = Tensor::zeros(y.shape());
    logit_inverse_row(y.as_slice(), alpha, x.as_mut_slice());
    Ok(x)
}

pub(crate) fn logit_inverse_row<T: Real>(y: &[T], alpha: f64, out: &mut [T]) {
    let scale = 1.0 - 2.0 * alpha;
    for (o, &v) in out.iter_mut().zip(y) {
        let s = 1.0 / (1.0 + (-v.as_f64()).exp());
        *o = T::of((s - alpha) / scale);
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "logit alpha must lie in (0, 0.5), got {alpha}"
        )))
    }
}
