mod common;

use common::*;
use gradflow::flow::{bpd, CouplingKind, FlowConfig, FlowModel, LayerGrouping};
use gradflow::numerics::{gaussian_log_pdf, logit_preprocess, Precision, SeededRng, Tensor};
use gradflow::Error;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn desk64() -> FlowConfig {
    FlowConfig {
        precision: Precision::F64,
        ..FlowConfig::preset("glow-desk").unwrap()
    }
}

#[test]
fn desk_preset_layer_count_is_stable() {
    let cfg = FlowConfig::preset("glow-desk").unwrap();
    let a = FlowModel::<f32>::build(cfg.clone(), &mut SeededRng::new(1, 0)).unwrap();
    let b = FlowModel::<f32>::build(cfg, &mut SeededRng::new(1, 0)).unwrap();
    // 8 steps x (2 actnorm + 3 mix + 6 coupling) tensors
    assert_eq!(a.layers().len(), 88);
    assert_eq!(a.params(), b.params());
    assert_eq!(a.mix_buffers(), b.mix_buffers());
    for (i, l) in a.layers().iter().enumerate() {
        assert_eq!(l.index, i);
    }
    assert_eq!(a.layers()[0].name, "block0.step0.actnorm.bias");
    assert!(a.layers().iter().any(|l| l.name == "block1.step3.coupling.w1"));
}

#[test]
fn parameter_groups_partition_all_parameters() {
    let m = FlowModel::<f32>::build(FlowConfig::preset("glow-desk").unwrap(), &mut SeededRng::new(1, 0)).unwrap();
    let total: usize = m.layers().iter().map(|l| l.numel()).sum();
    assert_eq!(total, m.num_params());
    for grouping in [LayerGrouping::PerTensor, LayerGrouping::PerSublayer] {
        let mut seen: Vec<usize> = m.layer_groups(grouping).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..m.layers().len()).collect::<Vec<_>>());
    }
    // actnorm, invmix, three coupling convs per step
    assert_eq!(m.layer_groups(LayerGrouping::PerSublayer).len(), 8 * 5);
}

#[test]
fn different_seeds_give_different_models() {
    let cfg = FlowConfig::preset("glow-desk").unwrap();
    let a = FlowModel::<f32>::build(cfg.clone(), &mut SeededRng::new(1, 0)).unwrap();
    let b = FlowModel::<f32>::build(cfg, &mut SeededRng::new(2, 0)).unwrap();
    assert_ne!(a.params(), b.params());
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = FlowConfig::preset("glow-desk").unwrap();
    cfg.coupling = CouplingKind::Dense;
    assert!(matches!(
        FlowModel::<f32>::build(cfg, &mut SeededRng::new(0, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn couplings_are_identity_at_init() {
    let cfg = desk64();
    let mut m = FlowModel::<f64>::build(cfg.clone(), &mut SeededRng::new(3, 0)).unwrap();
    let x = random_inputs::<f64>(cfg.image_shape, 8, 4);
    m.actnorm_init(&x).unwrap();
    let names = m.step_names();
    for per_sample in m.step_log_dets(&x).unwrap() {
        for (name, ld) in names.iter().zip(per_sample) {
            if name.ends_with("coupling") {
                assert_eq!(ld, 0.0, "{name}");
            }
        }
    }
}

#[test]
fn forward_requires_initialization_and_matching_shape() {
    let cfg = desk64();
    let mut m = FlowModel::<f64>::build(cfg.clone(), &mut SeededRng::new(3, 0)).unwrap();
    let x = random_inputs::<f64>(cfg.image_shape, 4, 4);
    assert!(matches!(m.forward_log_prob(&x), Err(Error::State(_))));
    m.actnorm_init(&x).unwrap();
    assert!(matches!(m.actnorm_init(&x), Err(Error::State(_))));
    let wrong = random_inputs::<f64>([1, 4, 4], 2, 1);
    assert!(matches!(m.forward_log_prob(&wrong), Err(Error::Shape(_))));
}

#[test]
fn actnorm_outputs_are_standardized_on_the_init_batch() {
    // Single-step-per-block model so every ActNorm sees the init batch directly
    // through preceding layers; check the first ActNorm of each block.
    let cfg = desk64();
    let mut m = FlowModel::<f64>::build(cfg.clone(), &mut SeededRng::new(8, 0)).unwrap();
    let x = random_inputs::<f64>(cfg.image_shape, 32, 9);
    let report = m.actnorm_init(&x).unwrap();
    assert_eq!(report.floored_channels, 0);
    // The first ActNorm acts on the squeezed logit image: reconstruct its output.
    let y = logit_preprocess(&x, cfg.logit_alpha).unwrap().y;
    let bias = m.params()[0].as_slice();
    let ls = m.params()[1].as_slice();
    for c in 0..4 {
        let (dy, dx) = (c / 2, c % 2);
        let mut vals = Vec::new();
        for n in 0..32 {
            let img = y.row(n);
            for i in 0..4 {
                for j in 0..4 {
                    let v = img[(2 * i + dy) * 8 + 2 * j + dx];
                    vals.push((v + bias[c]) * ls[c].exp());
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() <= 1e-4, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "var {var}");
    }
}

#[test]
fn actnorm_variance_floor_on_constant_images() {
    let cfg = desk64();
    let mut m = FlowModel::<f64>::build(cfg.clone(), &mut SeededRng::new(8, 0)).unwrap();
    let x = Tensor::from_vec(&[4, 1, 8, 8], vec![0.5; 256]).unwrap();
    let report = m.actnorm_init(&x).unwrap();
    assert!(report.floored_channels > 0);
    assert!(m.params().iter().all(|p| p.is_finite()));
}

#[test]
fn identity_model_density_is_the_prior() {
    let cfg = desk64();
    let m = FlowModel::<f64>::identity(cfg.clone()).unwrap();
    let x = random_inputs::<f64>(cfg.image_shape, 5, 2);
    let pre = logit_preprocess(&x, cfg.logit_alpha).unwrap();
    let lp = m.forward_log_prob(&x).unwrap();
    for i in 0..5 {
        let prior: f64 = gaussian_log_pdf(pre.y.row(i), 0.0, 1.0).unwrap().iter().sum();
        assert!((lp.per_sample_log_prob[i] - (prior + pre.logdet[i])).abs() < 1e-9);
    }
    // and the latent is a permutation of the preprocessed values
    let z = m.encode(&x).unwrap();
    let mut a = z.row(0).to_vec();
    let mut b = pre.y.row(0).to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
}

#[test]
fn log_prob_is_consistent_with_bpd() {
    let cfg = desk64();
    let m = ready_model::<f64>(cfg.clone(), 11, 0.02);
    let x = random_inputs::<f64>(cfg.image_shape, 3, 12);
    let lp = m.forward_log_prob(&x).unwrap();
    let d = cfg.dims();
    for &l in &lp.per_sample_log_prob {
        let b = bpd(l, d, 256).unwrap();
        let back = -b * d as f64 * std::f64::consts::LN_2 + d as f64 * 256f64.ln();
        assert!((back - l).abs() < 1e-9);
    }
    let sum: f64 = lp.per_sample_log_prob.iter().sum();
    assert!((lp.total_log_prob - sum).abs() < 1e-12);
}

#[test]
fn forward_is_side_effect_free() {
    let cfg = FlowConfig::preset("glow-desk").unwrap();
    let m = ready_model::<f32>(cfg.clone(), 5, 0.02);
    let before = m.params().to_vec();
    let x = random_inputs::<f32>(cfg.image_shape, 6, 1);
    let a = m.forward_log_prob(&x).unwrap();
    let b = m.forward_log_prob(&x).unwrap();
    assert_eq!(a.per_sample_log_prob, b.per_sample_log_prob);
    let g = m.log_prob_and_gradients(&x).unwrap();
    assert_eq!(g.per_sample_log_prob, a.per_sample_log_prob);
    assert_eq!(m.params(), before.as_slice());
}

fn jacobian_check(cfg: FlowConfig, seed: u64, inputs: usize) {
    let m = ready_model::<f64>(cfg.clone(), seed, 0.1);
    let d = cfg.dims();
    let x = random_inputs::<f64>(cfg.image_shape, inputs, seed + 10);
    let lp = m.forward_log_prob(&x).unwrap();
    let z = m.encode(&x).unwrap();
    let h = 1e-6;
    for n in 0..inputs {
        let prior: f64 = z.row(n).iter().map(|v| -0.5 * v * v - HALF_LN_2PI).sum();
        let model_logdet = lp.per_sample_log_prob[n] - prior;
        let mut jac = vec![0.0; d * d];
        for j in 0..d {
            let mut plus = x.row(n).to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let shape = [1, cfg.image_shape[0], cfg.image_shape[1], cfg.image_shape[2]];
            let zp = m.encode(&Tensor::from_vec(&shape, plus).unwrap()).unwrap();
            let zm = m.encode(&Tensor::from_vec(&shape, minus).unwrap()).unwrap();
            for i in 0..d {
                jac[i * d + j] = (zp.as_slice()[i] - zm.as_slice()[i]) / (2.0 * h);
            }
        }
        let brute = log_abs_det(jac, d);
        assert!(
            (model_logdet - brute).abs() < 1e-3,
            "input {n}: model {model_logdet} brute {brute}"
        );
    }
}

#[test]
fn log_det_matches_brute_force_jacobian_conv_12d() {
    let cfg = config([3, 2, 2], 1, 3, 8, CouplingKind::Convolutional, Precision::F64);
    assert_eq!(cfg.dims(), 12);
    jacobian_check(cfg, 21, 10);
}

#[test]
fn log_det_matches_brute_force_jacobian_dense_12d() {
    let cfg = config([1, 3, 4], 1, 4, 8, CouplingKind::Dense, Precision::F64);
    jacobian_check(cfg, 22, 10);
}

#[test]
fn log_det_matches_brute_force_jacobian_multiscale_16d() {
    let cfg = config([1, 4, 4], 2, 2, 8, CouplingKind::Convolutional, Precision::F64);
    jacobian_check(cfg, 23, 4);
}

#[test]
fn invertibility_f32() {
    // 0.02 keeps latents near unit scale; much larger random weights give a
    // degenerate model whose conditioners amplify rounding arbitrarily.
    let cfg = FlowConfig::preset("glow-desk").unwrap();
    let m = ready_model::<f32>(cfg.clone(), 31, 0.02);
    let x = random_inputs::<f32>(cfg.image_shape, 100, 32);
    let z = m.encode(&x).unwrap();
    let y = m.inverse_preprocessed(&z, 1.0).unwrap();
    let pre = logit_preprocess(&x, cfg.logit_alpha).unwrap().y;
    let err = y
        .as_slice()
        .iter()
        .zip(pre.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err < 1e-4, "max error {err}");
    let img = m.inverse(&z, 1.0).unwrap();
    let err = img
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err < 1e-4, "image-space error {err}");
}

#[test]
fn invertibility_f64() {
    let cfg = desk64();
    let m = ready_model::<f64>(cfg.clone(), 31, 0.05);
    let x = random_inputs::<f64>(cfg.image_shape, 20, 33);
    let z = m.encode(&x).unwrap();
    let y = m.inverse_preprocessed(&z, 1.0).unwrap();
    let pre = logit_preprocess(&x, cfg.logit_alpha).unwrap().y;
    let err = y
        .as_slice()
        .iter()
        .zip(pre.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "max error {err}");
}

#[test]
fn zero_temperature_gives_the_mode_image() {
    let cfg = FlowConfig::preset("glow-desk").unwrap();
    let m = ready_model::<f32>(cfg.clone(), 3, 0.05);
    let a = m.sample(2, 0.0, &mut SeededRng::new(1, 0)).unwrap();
    let b = m.sample(2, 0.0, &mut SeededRng::new(2, 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.row(0), a.row(1));
    let zeros = Tensor::<f32>::zeros(&[1, 64]);
    assert_eq!(m.inverse(&zeros, 1.0).unwrap().row(0), a.row(0));
    assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn latent_shape_mismatch_is_shape_error() {
    let m = ready_model::<f32>(FlowConfig::preset("glow-desk").unwrap(), 3, 0.0);
    assert!(matches!(m.inverse(&Tensor::zeros(&[1, 63]), 1.0), Err(Error::Shape(_))));
}

#[test]
fn duplicated_sample_doubles_gradients() {
    let cfg = desk64();
    let m = ready_model::<f64>(cfg.clone(), 41, 0.05);
    let x = random_inputs::<f64>(cfg.image_shape, 1, 42);
    let mut twice = x.as_slice().to_vec();
    twice.extend_from_slice(x.as_slice());
    let x2 = Tensor::from_vec(&[2, 1, 8, 8], twice).unwrap();
    let g1 = m.log_prob_and_gradients(&x).unwrap().per_layer_gradients.unwrap();
    let g2 = m.log_prob_and_gradients(&x2).unwrap().per_layer_gradients.unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((2.0 * u - v).abs() <= 1e-12 * v.abs().max(1.0), "{u} {v}");
        }
    }
}

#[test]
fn zeroed_output_layer_kills_upstream_coupling_gradients() {
    let cfg = desk64();
    let mut m = FlowModel::<f64>::build(cfg.clone(), &mut SeededRng::new(5, 0)).unwrap();
    let x = random_inputs::<f64>(cfg.image_shape, 4, 6);
    m.actnorm_init(&x).unwrap();
    let g = m.log_prob_and_gradients(&x).unwrap().per_layer_gradients.unwrap();
    for (l, grad) in m.layers().iter().zip(&g) {
        let dead = ["w1", "b1", "w2", "b2"]
            .iter()
            .any(|s| l.name.ends_with(&format!("coupling.{s}")));
        if dead {
            assert!(grad.as_slice().iter().all(|&v| v == 0.0), "{}", l.name);
        }
        if l.name.ends_with("coupling.b3") {
            assert!(grad.norm_sq() > 0.0, "{}", l.name);
        }
    }
}

/// Central differences of the summed log-likelihood over every parameter of a
/// reduced multi-scale model; the acceptance target runs the full desk model.
#[test]
fn gradients_match_finite_differences_on_every_parameter() {
    let cfg = config([1, 8, 8], 2, 2, 8, CouplingKind::Convolutional, Precision::F64);
    let mut m = ready_model::<f64>(cfg.clone(), 51, 0.05);
    let x = random_inputs::<f64>(cfg.image_shape, 2, 52);
    let analytic = m.log_prob_and_gradients(&x).unwrap().per_layer_gradients.unwrap();
    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    for t in 0..m.params().len() {
        for k in 0..m.params()[t].len() {
            let orig = m.params()[t].as_slice()[k];
            m.params_mut()[t].as_mut_slice()[k] = orig + h;
            let fp = m.forward_log_prob(&x).unwrap().total_log_prob;
            m.params_mut()[t].as_mut_slice()[k] = orig - h;
            let fm = m.forward_log_prob(&x).unwrap().total_log_prob;
            m.params_mut()[t].as_mut_slice()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[t].as_slice()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}] analytic {a} fd {fd}", m.layers()[t].name));
            }
        }
    }
    assert!(worst.0 < 1e-3, "worst relative error {} at {}", worst.0, worst.1);
}

#[test]
fn dense_gradients_match_finite_differences() {
    let cfg = config([1, 2, 5], 1, 3, 6, CouplingKind::Dense, Precision::F64);
    let mut m = ready_model::<f64>(cfg.clone(), 61, 0.1);
    let x = random_inputs::<f64>(cfg.image_shape, 3, 62);
    let analytic = m.log_prob_and_gradients(&x).unwrap().per_layer_gradients.unwrap();
    let h = 1e-5;
    for t in 0..m.params().len() {
        for k in 0..m.params()[t].len() {
            let orig = m.params()[t].as_slice()[k];
            m.params_mut()[t].as_mut_slice()[k] = orig + h;
            let fp = m.forward_log_prob(&x).unwrap().total_log_prob;
            m.params_mut()[t].as_mut_slice()[k] = orig - h;
            let fm = m.forward_log_prob(&x).unwrap().total_log_prob;
            m.params_mut()[t].as_mut_slice()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[t].as_slice()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-3, "{}[{k}] analytic {a} fd {fd}", m.layers()[t].name);
        }
    }
}
