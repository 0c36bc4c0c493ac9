use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// First/second moment estimates mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One Adam step with bias correction. Weight decay is decoupled:
/// `p <- p * (1 - lr * wd)` before the moment update is applied.
/// Arithmetic runs in f64 and is rounded once per stored value.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &AdamParams,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {}/{} moment tensors",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].shape() != p.shape() || state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(Error::Shape(format!("adam: tensor {i} shape {:?} mismatch", p.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (k, pk) in p.as_mut_slice().iter_mut().enumerate() {
            let gk = g[k].as_f64();
            let mk = cfg.beta1 * m[k].as_f64() + (1.0 - cfg.beta1) * gk;
            let vk = cfg.beta2 * v[k].as_f64() + (1.0 - cfg.beta2) * gk * gk;
            m[k] = T::of(mk);
            v[k] = T::of(vk);
            let update = cfg.learning_rate * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
            let decayed = if cfg.weight_decay == 0.0 {
                pk.as_f64()
            } else {
                pk.as_f64() * decay
            };
            *pk = T::of(decayed - update);
        }
    }
    Ok(())
}
