#![allow(dead_code)]

use gradflow::flow::{CouplingKind, FlowConfig, FlowModel};
use gradflow::numerics::{Precision, Real, SeededRng, Tensor};

/// Adds N(0, scale^2) noise to every parameter so no branch is dead.
pub fn perturb<T: Real>(model: &mut FlowModel<T>, scale: f64, seed: u64) {
    let mut rng = SeededRng::new(seed, 99);
    for p in model.params_mut() {
        for v in p.as_mut_slice() {
            *v += T::of(scale * rng.normal());
        }
    }
}

/// Uniform inputs in [0.02, 0.98] of shape (n, c, h, w).
pub fn random_inputs<T: Real>(shape: [usize; 3], n: usize, seed: u64) -> Tensor<T> {
    let mut rng = SeededRng::new(seed, 5);
    let d: usize = shape.iter().product();
    let data = (0..n * d).map(|_| T::of(0.02 + 0.96 * rng.uniform())).collect();
    Tensor::from_vec(&[n, shape[0], shape[1], shape[2]], data).unwrap()
}

pub fn config(
    shape: [usize; 3],
    blocks: usize,
    steps: usize,
    hidden: usize,
    coupling: CouplingKind,
    precision: Precision,
) -> FlowConfig {
    FlowConfig {
        blocks,
        steps_per_block: steps,
        hidden_channels: hidden,
        coupling,
        image_shape: shape,
        precision,
        ..FlowConfig::preset("glow-desk").unwrap()
    }
}

/// Built, ActNorm-initialized on `init_batch` and perturbed.
pub fn ready_model<T: Real>(cfg: FlowConfig, seed: u64, perturbation: f64) -> FlowModel<T> {
    let mut model = FlowModel::<T>::build(cfg.clone(), &mut SeededRng::new(seed, 0)).unwrap();
    let init = random_inputs::<T>(cfg.image_shape, 16, seed + 1);
    model.actnorm_init(&init).unwrap();
    perturb(&mut model, perturbation, seed + 2);
    model
}

/// log|det| of a square matrix by partial-pivot Gaussian elimination.
pub fn log_abs_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))
            .unwrap();
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
        }
        let piv = a[k * n + k];
        acc += piv.abs().ln();
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
        }
    }
    acc
}
