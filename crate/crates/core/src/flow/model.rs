use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CouplingKind, FlowConfig};
use super::conv::ConvGeom;
use super::layers::{tri_index, ActNorm, Coupling, CouplingCache, InvMix, MixMatrices};
use super::linalg;
use crate::error::{Error, Result};
use crate::numerics::{logit::logit_inverse_row, logit::logit_row, Real, SeededRng, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const ACTNORM_VAR_FLOOR: f64 = 1e-6;
/// Samples per gradient partial sum; partial sums are added in chunk order so
/// results do not depend on the worker count.
const GRAD_CHUNK: usize = 8;

/// One learnable parameter tensor of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRef {
    pub index: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerRef {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Name of the sublayer this tensor belongs to: weight and bias of one
    /// coupling conv share `…coupling.1`, all ActNorm / 1x1 mix tensors share
    /// the step's `…actnorm` / `…invmix`.
    pub fn sublayer(&self) -> String {
        let (prefix, leaf) = self.name.rsplit_once('.').unwrap_or(("", &self.name));
        if prefix.ends_with("coupling") {
            format!("{prefix}.{}", &leaf[1..])
        } else {
            prefix.to_string()
        }
    }
}

/// How parameter tensors are grouped into scored layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerGrouping {
    /// One layer per parameter tensor.
    #[default]
    PerTensor,
    /// Weight and bias of the same sublayer merged.
    PerSublayer,
}

/// Fixed (non-learned) state of one invertible 1x1 mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixBuffer {
    pub row_of: Vec<usize>,
    pub sign: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LogProbResult<T> {
    /// log p(x) in nats per sample.
    pub per_sample_log_prob: Vec<f64>,
    pub total_log_prob: f64,
    /// Gradients of `total_log_prob`, aligned with [`FlowModel::layers`].
    pub per_layer_gradients: Option<Vec<Tensor<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActNormInitReport {
    /// Number of (step, channel) pairs whose variance hit the floor.
    pub floored_channels: usize,
    pub total_channels: usize,
}

#[derive(Debug, Clone)]
enum Step {
    ActNorm(ActNorm),
    Mix(InvMix),
    Coupling(Coupling),
}

#[derive(Debug, Clone)]
struct StepNode {
    name: String,
    step: Step,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Squeeze {
        c: usize,
        h: usize,
        w: usize,
    },
    Step(usize),
    /// Keep the first `keep` elements, factor out the rest as a latent part.
    Split {
        keep: usize,
    },
}

struct Trace<T> {
    inputs: Vec<Vec<T>>,
    caches: Vec<Option<CouplingCache<T>>>,
    parts: Vec<Vec<T>>,
}

struct SampleForward<T> {
    log_prob: f64,
    latent: Vec<T>,
    step_logdets: Vec<f64>,
}

/// Multi-scale GLOW-style flow: per block a squeeze, `steps_per_block`
/// (ActNorm, 1x1 mix, affine coupling) triples, and a split that factors half
/// of the channels out to the standard-normal prior.
#[derive(Debug, Clone)]
pub struct FlowModel<T> {
    config: FlowConfig,
    layers: Vec<LayerRef>,
    params: Vec<Tensor<T>>,
    steps: Vec<StepNode>,
    stages: Vec<Stage>,
    initialized: bool,
}

impl<T: Real> FlowModel<T> {
    /// Random initialization: orthogonal 1x1 mixes, small random coupling
    /// weights with a zero output layer, ActNorm left for data-dependent init.
    pub fn build(config: FlowConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        for si in 0..model.steps.len() {
            match &mut model.steps[si].step {
                Step::ActNorm(_) => {}
                Step::Mix(mix) => {
                    let n = mix.channels;
                    let a: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
                    let q = linalg::orthonormalize(&a, n);
                    let (row_of, l, u) = linalg::lu_decompose(&q, n);
                    mix.row_of = row_of;
                    let base = mix.base;
                    let mut lower = vec![T::zero(); n * (n - 1) / 2];
                    let mut upper = vec![T::zero(); n * (n - 1) / 2];
                    let mut ls = vec![T::zero(); n];
                    for r in 0..n {
                        let d = u[r * n + r];
                        mix.sign[r] = if d < 0.0 { -1.0 } else { 1.0 };
                        ls[r] = T::of(d.abs().ln());
                        for c in 0..r {
                            lower[tri_index(r, c)] = T::of(l[r * n + c]);
                            upper[tri_index(r, c)] = T::of(u[c * n + r]);
                        }
                    }
                    model.params[base + InvMix::LOWER]
                        .as_mut_slice()
                        .copy_from_slice(&lower);
                    model.params[base + InvMix::UPPER]
                        .as_mut_slice()
                        .copy_from_slice(&upper);
                    model.params[base + InvMix::LOG_SCALE]
                        .as_mut_slice()
                        .copy_from_slice(&ls);
                }
                Step::Coupling(cp) => {
                    for (k, geom) in [(Coupling::W1, cp.l1), (Coupling::W2, cp.l2)] {
                        let fan_in = (geom.cin * geom.kernel * geom.kernel) as f64;
                        let sd = 1.0 / fan_in.sqrt();
                        for v in model.params[cp.base + k].as_mut_slice() {
                            *v = T::of(sd * rng.normal());
                        }
                    }
                }
            }
        }
        Ok(model)
    }

    /// Every step is the identity: ActNorm (scale 1, bias 0), 1x1 mix = I,
    /// zero coupling networks. Marked initialized.
    pub fn identity(config: FlowConfig) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        model.initialized = true;
        Ok(model)
    }

    /// Reassembles a model from stored parameters and mix buffers.
    pub fn from_parts(
        config: FlowConfig,
        params: Vec<Tensor<T>>,
        buffers: Vec<MixBuffer>,
        initialized: bool,
    ) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (layer, p) in model.layers.iter().zip(&params) {
            if p.shape() != layer.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: expected shape {:?}, got {:?}",
                    layer.name,
                    layer.shape,
                    p.shape()
                )));
            }
        }
        model.params = params;
        let mut it = buffers.into_iter();
        for node in &mut model.steps {
            if let Step::Mix(mix) = &mut node.step {
                let buf = it.next().ok_or_else(|| Error::Shape("too few mix buffers".into()))?;
                let n = mix.channels;
                let mut seen = vec![false; n];
                let valid = buf.row_of.len() == n
                    && buf.sign.len() == n
                    && buf
                        .row_of
                        .iter()
                        .all(|&r| r < n && !std::mem::replace(&mut seen[r], true))
                    && buf.sign.iter().all(|s| *s == 1.0 || *s == -1.0);
                if !valid {
                    return Err(Error::Shape(format!("{}: invalid mix buffer", node.name)));
                }
                mix.row_of = buf.row_of;
                mix.sign = buf.sign;
            }
        }
        if it.next().is_some() {
            return Err(Error::Shape("too many mix buffers".into()));
        }
        model.initialized = initialized;
        Ok(model)
    }

    fn skeleton(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut layers: Vec<LayerRef> = Vec::new();
        let mut params: Vec<Tensor<T>> = Vec::new();
        let mut steps = Vec::new();
        let mut stages = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, layers: &mut Vec<LayerRef>| {
            params.push(Tensor::zeros(&shape));
            layers.push(LayerRef {
                index: layers.len(),
                name,
                shape,
            });
        };

        let [c0, h0, w0] = config.image_shape;
        let (mut c, mut h, mut w) = match config.coupling {
            CouplingKind::Convolutional => (c0, h0, w0),
            CouplingKind::Dense => (c0 * h0 * w0, 1, 1),
        };
        let hid = config.hidden_channels;
        for b in 0..config.blocks {
            if config.coupling == CouplingKind::Convolutional {
                stages.push(Stage::Squeeze { c, h, w });
                c *= 4;
                h /= 2;
                w /= 2;
            }
            let hw = h * w;
            for s in 0..config.steps_per_block {
                let prefix = format!("block{b}.step{s}");

                let base = layers.len();
                add(format!("{prefix}.actnorm.bias"), vec![c], &mut layers);
                add(format!("{prefix}.actnorm.log_scale"), vec![c], &mut layers);
                stages.push(Stage::Step(steps.len()));
                steps.push(StepNode {
                    name: format!("{prefix}.actnorm"),
                    step: Step::ActNorm(ActNorm {
                        base,
                        channels: c,
                        spatial: hw,
                    }),
                });

                let base = layers.len();
                let tri = c * (c - 1) / 2;
                add(format!("{prefix}.invmix.lower"), vec![tri], &mut layers);
                add(format!("{prefix}.invmix.upper"), vec![tri], &mut layers);
                add(format!("{prefix}.invmix.log_scale"), vec![c], &mut layers);
                stages.push(Stage::Step(steps.len()));
                steps.push(StepNode {
                    name: format!("{prefix}.invmix"),
                    step: Step::Mix(InvMix {
                        base,
                        channels: c,
                        spatial: hw,
                        row_of: (0..c).collect(),
                        sign: vec![1.0; c],
                    }),
                });

                let base = layers.len();
                let (cond, trans, kernel, na, nb) = match config.coupling {
                    CouplingKind::Convolutional => {
                        let ca = c / 2;
                        let cond: Vec<usize> = (0..ca * hw).collect();
                        let trans: Vec<usize> = (ca * hw..c * hw).collect();
                        (cond, trans, 3, ca, c - ca)
                    }
                    CouplingKind::Dense => {
                        let parity = s % 2;
                        let (cond, trans): (Vec<usize>, Vec<usize>) = (0..c).partition(|i| i % 2 == parity);
                        let (na, nb) = (cond.len(), trans.len());
                        (cond, trans, 1, na, nb)
                    }
                };
                let geom = |cin, cout, kernel| ConvGeom {
                    cin,
                    cout,
                    height: h,
                    width: w,
                    kernel,
                };
                let (l1, l2, l3) = (geom(na, hid, kernel), geom(hid, hid, 1), geom(hid, 2 * nb, kernel));
                let conv_shape = |g: &ConvGeom| {
                    if g.kernel == 1 {
                        vec![g.cout, g.cin]
                    } else {
                        vec![g.cout, g.cin, g.kernel, g.kernel]
                    }
                };
                for (i, g) in [&l1, &l2, &l3].into_iter().enumerate() {
                    add(format!("{prefix}.coupling.w{}", i + 1), conv_shape(g), &mut layers);
                    add(format!("{prefix}.coupling.b{}", i + 1), vec![g.cout], &mut layers);
                }
                stages.push(Stage::Step(steps.len()));
                steps.push(StepNode {
                    name: format!("{prefix}.coupling"),
                    step: Step::Coupling(Coupling {
                        base,
                        cond,
                        trans,
                        l1,
                        l2,
                        l3,
                        clamp: config.scale_clamp,
                    }),
                });
            }
            if b + 1 < config.blocks {
                let keep = c / 2;
                stages.push(Stage::Split { keep: keep * h * w });
                c = keep;
            }
        }
        Ok(FlowModel {
            config,
            layers,
            params,
            steps,
            stages,
            initialized: false,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerRef] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn dims(&self) -> usize {
        self.config.dims()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn step_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn mix_buffers(&self) -> Vec<MixBuffer> {
        self.steps
            .iter()
            .filter_map(|s| match &s.step {
                Step::Mix(m) => Some(MixBuffer {
                    row_of: m.row_of.clone(),
                    sign: m.sign.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Parameter-tensor indices of each scored layer under `grouping`.
    pub fn layer_groups(&self, grouping: LayerGrouping) -> Vec<Vec<usize>> {
        match grouping {
            LayerGrouping::PerTensor => (0..self.layers.len()).map(|i| vec![i]).collect(),
            LayerGrouping::PerSublayer => {
                let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
                for l in &self.layers {
                    let key = l.sublayer();
                    match groups.last_mut() {
                        Some((k, members)) if *k == key => members.push(l.index),
                        _ => groups.push((key, vec![l.index])),
                    }
                }
                groups.into_iter().map(|(_, m)| m).collect()
            }
        }
    }

    /// Data-dependent ActNorm initialization on a dequantized batch in [0, 1].
    pub fn actnorm_init(&mut self, x: &Tensor<T>) -> Result<ActNormInitReport> {
        if self.initialized {
            return Err(Error::State("ActNorm layers are already initialized".into()));
        }
        self.check_batch(x)?;
        if x.rows() < 2 {
            return Err(Error::InsufficientData(
                "ActNorm init needs a batch of at least 2".into(),
            ));
        }
        let alpha = self.config.logit_alpha;
        let mut hs: Vec<Vec<T>> = (0..x.rows())
            .map(|i| {
                let mut y = vec![T::zero(); x.row_len()];
                logit_row(x.row(i), alpha, &mut y).map(|_| y)
            })
            .collect::<Result<_>>()?;
        let mut report = ActNormInitReport {
            floored_channels: 0,
            total_channels: 0,
        };
        for si in 0..self.stages.len() {
            let stage = self.stages[si];
            match stage {
                Stage::Squeeze { c, h, w } => {
                    hs = hs.iter().map(|v| squeeze(v, c, h, w)).collect();
                }
                Stage::Split { keep } => hs.iter_mut().for_each(|v| v.truncate(keep)),
                Stage::Step(idx) => {
                    if let Step::ActNorm(an) = &self.steps[idx].step {
                        let (c, hw) = (an.channels, an.spatial);
                        let count = (hs.len() * hw) as f64;
                        for ch in 0..c {
                            let mut mean = 0.0;
                            for v in &hs {
                                mean += v[ch * hw..(ch + 1) * hw].iter().map(|x| x.as_f64()).sum::<f64>();
                            }
                            mean /= count;
                            let mut var = 0.0;
                            for v in &hs {
                                var += v[ch * hw..(ch + 1) * hw]
                                    .iter()
                                    .map(|x| (x.as_f64() - mean).powi(2))
                                    .sum::<f64>();
                            }
                            var /= count;
                            if var < ACTNORM_VAR_FLOOR {
                                report.floored_channels += 1;
                            }
                            report.total_channels += 1;
                            let var = var.max(ACTNORM_VAR_FLOOR);
                            self.params[an.base + ActNorm::BIAS].as_mut_slice()[ch] = T::of(-mean);
                            self.params[an.base + ActNorm::LOG_SCALE].as_mut_slice()[ch] = T::of(-0.5 * var.ln());
                        }
                    }
                    let prepared = self.prepare_step(idx);
                    hs = hs
                        .iter()
                        .map(|v| {
                            let mut y = vec![T::zero(); v.len()];
                            self.step_forward(idx, prepared.as_ref(), v, &mut y, None)?;
                            Ok(y)
                        })
                        .collect::<Result<_>>()?;
                }
            }
        }
        self.initialized = true;
        Ok(report)
    }

    /// Exact log-density (nats) of each dequantized sample in [0, 1].
    pub fn forward_log_prob(&self, x: &Tensor<T>) -> Result<LogProbResult<T>> {
        self.check_ready(x)?;
        let prepared = self.prepare();
        let per_sample: Vec<f64> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.forward_sample(&prepared, x.row(i), None).map(|f| f.log_prob))
            .collect::<Result<_>>()?;
        let total = per_sample.iter().sum();
        Ok(LogProbResult {
            per_sample_log_prob: per_sample,
            total_log_prob: total,
            per_layer_gradients: None,
        })
    }

    /// Log-densities plus the gradient of their sum with respect to every
    /// parameter tensor.
    pub fn log_prob_and_gradients(&self, x: &Tensor<T>) -> Result<LogProbResult<T>> {
        self.check_ready(x)?;
        let prepared = self.prepare();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let partials: Vec<(Vec<f64>, Vec<Vec<T>>)> = rows
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = self.zero_grads();
                let mut lps = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    lps.push(self.backward_sample(&prepared, x.row(i), &mut g)?);
                }
                Ok((lps, g))
            })
            .collect::<Result<_>>()?;
        let mut total_g = self.zero_grads();
        let mut per_sample = Vec::with_capacity(x.rows());
        for (lps, g) in partials {
            per_sample.extend(lps);
            for (acc, part) in total_g.iter_mut().zip(g) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        let grads = self.wrap_grads(total_g);
        Ok(LogProbResult {
            total_log_prob: per_sample.iter().sum(),
            per_sample_log_prob: per_sample,
            per_layer_gradients: Some(grads),
        })
    }

    /// Gradient of the summed log-likelihood of one group of samples, with the
    /// samples accumulated sequentially in row order. Runs on the caller's thread.
    pub fn group_gradient(&self, rows: &[&[T]]) -> Result<(f64, Vec<Tensor<T>>)> {
        if !self.initialized {
            return Err(Error::State("model ActNorm layers are not initialized".into()));
        }
        let len = self.dims();
        let prepared = self.prepare();
        let mut g = self.zero_grads();
        let mut total = 0.0;
        for r in rows {
            if r.len() != len {
                return Err(Error::Shape(format!(
                    "sample has {} values, model expects {len}",
                    r.len()
                )));
            }
            total += self.backward_sample(&prepared, r, &mut g)?;
        }
        Ok((total, self.wrap_grads(g)))
    }

    /// Per-sample, per-step log-determinants, aligned with [`Self::step_names`].
    pub fn step_log_dets(&self, x: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        self.check_ready(x)?;
        let prepared = self.prepare();
        (0..x.rows())
            .map(|i| self.forward_sample(&prepared, x.row(i), None).map(|f| f.step_logdets))
            .collect()
    }

    /// Latent code (rows of length D) for each sample.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_ready(x)?;
        let prepared = self.prepare();
        let rows: Vec<Vec<T>> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.forward_sample(&prepared, x.row(i), None).map(|f| f.latent))
            .collect::<Result<_>>()?;
        Tensor::from_vec(&[x.rows(), self.dims()], rows.concat())
    }

    /// Maps latents back to the logit-preprocessed representation.
    pub fn inverse_preprocessed(&self, latent: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        let d = self.dims();
        if latent.shape().len() != 2 || latent.row_len() != d {
            return Err(Error::Shape(format!(
                "latent must have shape (n, {d}), got {:?}",
                latent.shape()
            )));
        }
        let prepared = self.prepare();
        let temp = T::of(temperature);
        let rows: Vec<Vec<T>> = (0..latent.rows())
            .into_par_iter()
            .map(|i| {
                let z: Vec<T> = latent.row(i).iter().map(|&v| v * temp).collect();
                self.inverse_sample(&prepared, &z)
            })
            .collect();
        let [c, h, w] = self.config.image_shape;
        Tensor::from_vec(&[latent.rows(), c, h, w], rows.concat())
    }

    /// Maps latents (scaled by `temperature`) to images in [0, 1].
    pub fn inverse(&self, latent: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
        let y = self.inverse_preprocessed(latent, temperature)?;
        let mut x = Tensor::zeros(y.shape());
        logit_inverse_row(y.as_slice(), self.config.logit_alpha, x.as_mut_slice());
        for v in x.as_mut_slice() {
            *v = if v.is_nan() {
                T::zero()
            } else {
                v.max(T::zero()).min(T::one())
            };
        }
        Ok(x)
    }

    /// `n` images drawn from the model at the given prior temperature.
    pub fn sample(&self, n: usize, temperature: f64, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let d = self.dims();
        let z: Vec<T> = (0..n * d).map(|_| T::of(rng.normal())).collect();
        self.inverse(&Tensor::from_vec(&[n, d], z)?, temperature)
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.config.image_shape;
        if x.shape() != [x.rows(), c, h, w] || x.rows() == 0 {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match (n, {c}, {h}, {w})",
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_ready(&self, x: &Tensor<T>) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("model ActNorm layers are not initialized".into()));
        }
        self.check_batch(x)
    }

    fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn wrap_grads(&self, g: Vec<Vec<T>>) -> Vec<Tensor<T>> {
        g.into_iter()
            .zip(&self.layers)
            .map(|(v, l)| Tensor::from_vec(&l.shape, v).expect("gradient layout"))
            .collect()
    }

    fn prepare(&self) -> Vec<Option<MixMatrices<T>>> {
        (0..self.steps.len()).map(|i| self.prepare_step(i)).collect()
    }

    fn prepare_step(&self, idx: usize) -> Option<MixMatrices<T>> {
        match &self.steps[idx].step {
            Step::Mix(m) => Some(m.matrices(&self.params)),
            _ => None,
        }
    }

    fn step_forward(
        &self,
        idx: usize,
        mix: Option<&MixMatrices<T>>,
        x: &[T],
        y: &mut [T],
        cache: Option<&mut CouplingCache<T>>,
    ) -> Result<f64> {
        let node = &self.steps[idx];
        let ld = match &node.step {
            Step::ActNorm(a) => a.forward(&self.params, x, y),
            Step::Mix(m) => m.forward(&self.params, mix.expect("prepared mix"), x, y),
            Step::Coupling(c) => c.forward(&self.params, x, y, cache),
        };
        if !ld.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(&node.name, "non-finite activation or log-determinant"));
        }
        Ok(ld)
    }

    fn forward_sample(
        &self,
        prepared: &[Option<MixMatrices<T>>],
        x: &[T],
        mut trace: Option<&mut Trace<T>>,
    ) -> Result<SampleForward<T>> {
        let mut h = vec![T::zero(); x.len()];
        let mut log_prob = logit_row(x, self.config.logit_alpha, &mut h)?;
        let mut latent = Vec::with_capacity(x.len());
        let mut step_logdets = Vec::with_capacity(self.steps.len());
        for stage in &self.stages {
            match *stage {
                Stage::Squeeze { c, h: hh, w } => h = squeeze(&h, c, hh, w),
                Stage::Split { keep } => {
                    let part = h.split_off(keep);
                    latent.extend_from_slice(&part);
                    if let Some(t) = trace.as_deref_mut() {
                        t.parts.push(part);
                    }
                }
                Stage::Step(idx) => {
                    let mut y = vec![T::zero(); h.len()];
                    let ld = match trace.as_deref_mut() {
                        Some(t) => {
                            let mut cache = CouplingCache::default();
                            let ld = self.step_forward(idx, prepared[idx].as_ref(), &h, &mut y, Some(&mut cache))?;
                            let is_coupling = matches!(self.steps[idx].step, Step::Coupling(_));
                            t.caches.push(is_coupling.then_some(cache));
                            t.inputs.push(std::mem::take(&mut h));
                            ld
                        }
                        None => self.step_forward(idx, prepared[idx].as_ref(), &h, &mut y, None)?,
                    };
                    step_logdets.push(ld);
                    log_prob += ld;
                    h = y;
                }
            }
        }
        latent.extend_from_slice(&h);
        if let Some(t) = trace {
            t.parts.push(h);
        }
        let prior: f64 = latent
            .iter()
            .map(|z| {
                let z = z.as_f64();
                -0.5 * z * z - HALF_LN_2PI
            })
            .sum();
        log_prob += prior;
        if !log_prob.is_finite() {
            return Err(Error::numeric("prior", "non-finite log-likelihood"));
        }
        Ok(SampleForward {
            log_prob,
            latent,
            step_logdets,
        })
    }

    /// Forward with trace, then reverse-mode accumulation into `g`. Returns log p.
    fn backward_sample(&self, prepared: &[Option<MixMatrices<T>>], x: &[T], g: &mut [Vec<T>]) -> Result<f64> {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.steps.len()),
            caches: Vec::with_capacity(self.steps.len()),
            parts: Vec::new(),
        };
        let fwd = self.forward_sample(prepared, x, Some(&mut trace))?;
        let mut parts = trace.parts;
        let mut dh: Vec<T> = parts.pop().expect("final latent").iter().map(|&z| -z).collect();
        let mut inputs = trace.inputs;
        let mut caches = trace.caches;
        for stage in self.stages.iter().rev() {
            match *stage {
                Stage::Squeeze { c, h, w } => dh = unsqueeze(&dh, c, h, w),
                Stage::Split { .. } => {
                    let part = parts.pop().expect("split latent");
                    dh.extend(part.iter().map(|&z| -z));
                }
                Stage::Step(idx) => {
                    let input = inputs.pop().expect("step input");
                    let cache = caches.pop().expect("step cache");
                    let mut dx = vec![T::zero(); dh.len()];
                    match &self.steps[idx].step {
                        Step::ActNorm(a) => a.backward(&self.params, &input, &dh, &mut dx, g),
                        Step::Mix(m) => m.backward(
                            &self.params,
                            prepared[idx].as_ref().expect("prepared mix"),
                            &input,
                            &dh,
                            &mut dx,
                            g,
                        ),
                        Step::Coupling(c) => {
                            c.backward(&self.params, cache.as_ref().expect("coupling cache"), &dh, &mut dx, g)
                        }
                    }
                    dh = dx;
                }
            }
        }
        Ok(fwd.log_prob)
    }

    fn inverse_sample(&self, prepared: &[Option<MixMatrices<T>>], z: &[T]) -> Vec<T> {
        // latent parts in forward order: one per split, then the final remainder
        let mut sizes = Vec::new();
        let mut len = self.dims();
        for stage in &self.stages {
            if let Stage::Split { keep } = *stage {
                sizes.push(len - keep);
                len = keep;
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for s in &sizes {
            offsets.push(off);
            off += s;
        }
        let mut h = z[off..].to_vec();
        let mut part = sizes.len();
        for stage in self.stages.iter().rev() {
            match *stage {
                Stage::Squeeze { c, h: hh, w } => h = unsqueeze(&h, c, hh, w),
                Stage::Split { .. } => {
                    part -= 1;
                    h.extend_from_slice(&z[offsets[part]..offsets[part] + sizes[part]]);
                }
                Stage::Step(idx) => {
                    let mut x = vec![T::zero(); h.len()];
                    match &self.steps[idx].step {
                        Step::ActNorm(a) => a.inverse(&self.params, &h, &mut x),
                        Step::Mix(m) => m.inverse(prepared[idx].as_ref().expect("prepared mix"), &h, &mut x),
                        Step::Coupling(c) => c.inverse(&self.params, &h, &mut x),
                    }
                    h = x;
                }
            }
        }
        h
    }
}

/// (c, h, w) -> (4c, h/2, w/2); channel `4c' + 2dy + dx` holds pixel (2i+dy, 2j+dx).
fn squeeze<T: Copy>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for dy in 0..2 {
            for dx in 0..2 {
                for i in 0..h2 {
                    for j in 0..w2 {
                        out.push(x[ch * h * w + (2 * i + dy) * w + 2 * j + dx]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`squeeze`]; `(c, h, w)` is the unsqueezed shape.
fn unsqueeze<T: Copy + Default>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![T::default(); x.len()];
    let mut k = 0;
    for ch in 0..c {
        for dy in 0..2 {
            for dx in 0..2 {
                for i in 0..h2 {
                    for j in 0..w2 {
                        out[ch * h * w + (2 * i + dy) * w + 2 * j + dx] = x[k];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// Bits per dimension of a log-density (nats) over `dims` values quantized to
/// `levels` levels: `-log p / (D ln 2) + log2(S)`.
pub fn bpd(total_log_prob: f64, dims: usize, levels: u32) -> Result<f64> {
    if dims == 0 || levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "bpd needs dims >= 1 and levels >= 2, got {dims} and {levels}"
        )));
    }
    Ok(-total_log_prob / (dims as f64 * std::f64::consts::LN_2) + (levels as f64).log2())
}
