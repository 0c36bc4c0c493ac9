use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_score, diagonal_preconditioned_scores, estimate_fisher_diag, fit_layer_gaussians, layer_scores,
    FisherDiag, GaussianLayerStats, LayerScoreVector, ModelTag, SigmaConvention,
};
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::flow::{bpd, FlowModel, LayerGrouping};
use crate::numerics::{derive_stream, Real, SeededRng, Tensor};

const GROUP_TAG: u64 = 0x4752_5550;
const SCORE_DEQUANT_TAG: u64 = 0x5343_4f52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Gaussian NLL of the layer-wise gradient score vector.
    #[serde(alias = "gradient")]
    GradientAggregate,
    /// Bits per dimension of the group (mean over members).
    #[serde(alias = "nll-baseline")]
    NegativeBpdBaseline,
    /// As `GradientAggregate`, with gradients whitened by a diagonal Fisher.
    #[serde(alias = "diagonal")]
    DiagonalPreconditioned,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::GradientAggregate => "gradient-aggregate",
            ScoreKind::NegativeBpdBaseline => "negative-bpd-baseline",
            ScoreKind::DiagonalPreconditioned => "diagonal-preconditioned",
        }
    }

    pub fn needs_stats(self) -> bool {
        self != ScoreKind::NegativeBpdBaseline
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient-aggregate" | "gradient" => Ok(ScoreKind::GradientAggregate),
            "negative-bpd-baseline" | "nll-baseline" => Ok(ScoreKind::NegativeBpdBaseline),
            "diagonal-preconditioned" | "diagonal" => Ok(ScoreKind::DiagonalPreconditioned),
            _ => Err(Error::Config(format!(
                "unknown score kind '{s}' (gradient | nll-baseline | diagonal)"
            ))),
        }
    }
}

/// How samples are grouped for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBatchSpec {
    /// Group size; 1 is single-sample detection.
    pub b: usize,
    /// Seeds both the group shuffle and the dequantization noise.
    pub seed: u64,
    pub grouping: LayerGrouping,
}

impl ScoreBatchSpec {
    pub fn new(b: usize, seed: u64) -> Self {
        ScoreBatchSpec {
            b,
            seed,
            grouping: LayerGrouping::default(),
        }
    }

    /// Group sizes used in the published protocol.
    pub fn is_standard_b(&self) -> bool {
        matches!(self.b, 1 | 5)
    }
}

/// Disjoint groups of batch positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub groups: Vec<Vec<usize>>,
    /// Samples left over after the last full group.
    pub dropped: usize,
}

/// Seeded shuffle of `0..n`, cut into consecutive groups of `b`; the
/// remainder `n mod b` is dropped.
pub fn make_groups(n: usize, b: usize, seed: u64) -> Result<Grouping> {
    if b == 0 {
        return Err(Error::InvalidArgument("group size b must be at least 1".into()));
    }
    if n < b {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot form a group of {b}"
        )));
    }
    let perm = SeededRng::new(seed, derive_stream(GROUP_TAG, n as u64, b as u64)).permutation(n);
    let full = n / b * b;
    Ok(Grouping {
        groups: perm[..full].chunks(b).map(<[usize]>::to_vec).collect(),
        dropped: n - full,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_ids: Vec<usize>,
    pub checkpoint_epoch: usize,
    pub kind: ScoreKind,
    pub b: usize,
    pub score: f64,
    pub layer_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub dropped: usize,
}

pub const SCORE_CSV_HEADER: &str = "sample_ids;checkpoint_epoch;kind;b;score;layer_scores";

impl ScoreTable {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCORE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let ids: Vec<String> = r.sample_ids.iter().map(usize::to_string).collect();
            let layers = match &r.layer_scores {
                Some(v) => serde_json::to_string(v).expect("finite scores serialize"),
                None => String::new(),
            };
            writeln!(
                out,
                "{};{};{};{};{};{}",
                ids.join(","),
                r.checkpoint_epoch,
                r.kind,
                r.b,
                r.score,
                layers
            )
            .expect("string write");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ScoreTable> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == SCORE_CSV_HEADER => {}
            _ => {
                return Err(Error::format(
                    0,
                    format!("score CSV must start with '{SCORE_CSV_HEADER}'"),
                ))
            }
        }
        let mut rows = Vec::new();
        let mut offset = SCORE_CSV_HEADER.len() as u64 + 1;
        for (_, line) in lines {
            let bad = |what: &str| Error::format(offset, format!("{what} in score row '{line}'"));
            let f: Vec<&str> = line.split(';').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let sample_ids = f[0]
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad sample id"))?;
            let layer_scores = if f[5].is_empty() {
                None
            } else {
                Some(serde_json::from_str(f[5]).map_err(|_| bad("bad layer score array"))?)
            };
            rows.push(ScoreRow {
                sample_ids,
                checkpoint_epoch: f[1].parse().map_err(|_| bad("bad epoch"))?,
                kind: f[2].parse().map_err(|_| bad("bad kind"))?,
                b: f[3].parse().map_err(|_| bad("bad b"))?,
                score: f[4].parse().map_err(|_| bad("bad score"))?,
                layer_scores,
            });
            offset += line.len() as u64 + 1;
        }
        Ok(ScoreTable { rows, dropped: 0 })
    }
}

/// Read-only scoring of one model state.
pub struct Scorer<'a, T> {
    model: &'a FlowModel<T>,
    tag: ModelTag,
    spec: ScoreBatchSpec,
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn new(model: &'a FlowModel<T>, tag: ModelTag, spec: ScoreBatchSpec) -> Result<Self> {
        if spec.b == 0 {
            return Err(Error::InvalidArgument("group size b must be at least 1".into()));
        }
        if !model.is_initialized() {
            return Err(Error::State("cannot score with an uninitialized model".into()));
        }
        Ok(Scorer { model, tag, spec })
    }

    pub fn tag(&self) -> &ModelTag {
        &self.tag
    }

    /// Dequantized pixels (noise fixed by the batch seed and each sample id)
    /// and the grouping of their positions.
    fn prepare(&self, data: &ImageBatch) -> Result<(Tensor<T>, Grouping)> {
        if data.image_shape() != self.model.config().image_shape {
            return Err(Error::Shape(format!(
                "data images {:?} do not match model {:?}",
                data.image_shape(),
                self.model.config().image_shape
            )));
        }
        let x = data.dequantize(self.spec.seed, SCORE_DEQUANT_TAG);
        let grouping = make_groups(data.len(), self.spec.b, self.spec.seed)?;
        Ok((x, grouping))
    }

    fn vectors_for(
        &self,
        data: &ImageBatch,
        x: &Tensor<T>,
        groups: &[Vec<usize>],
        fisher: Option<&FisherDiag>,
    ) -> Result<Vec<LayerScoreVector>> {
        groups
            .par_iter()
            .map(|g| {
                let rows: Vec<&[T]> = g.iter().map(|&p| x.row(p)).collect();
                let values = match fisher {
                    Some(f) => diagonal_preconditioned_scores(self.model, &rows, f, self.spec.grouping)?,
                    None => layer_scores(self.model, &rows, self.spec.grouping)?,
                };
                Ok(LayerScoreVector {
                    values,
                    checkpoint: self.tag.clone(),
                    member_ids: g.iter().map(|&p| data.ids()[p]).collect(),
                })
            })
            .collect()
    }

    /// Layer score vectors of every full group, plus the dropped count.
    pub fn layer_vectors(
        &self,
        data: &ImageBatch,
        fisher: Option<&FisherDiag>,
    ) -> Result<(Vec<LayerScoreVector>, usize)> {
        let (x, grouping) = self.prepare(data)?;
        Ok((self.vectors_for(data, &x, &grouping.groups, fisher)?, grouping.dropped))
    }

    /// Fits per-layer Gaussians on at most `n_fit` groups of `data`.
    pub fn fit(
        &self,
        data: &ImageBatch,
        kind: ScoreKind,
        epsilon: f64,
        convention: SigmaConvention,
        n_fit: usize,
    ) -> Result<GaussianLayerStats> {
        if !kind.needs_stats() {
            return Err(Error::InvalidArgument(format!(
                "{kind} scores need no fitted statistics"
            )));
        }
        let (x, grouping) = self.prepare(data)?;
        let groups = &grouping.groups[..grouping.groups.len().min(n_fit)];
        let fisher = if kind == ScoreKind::DiagonalPreconditioned {
            let rows: Vec<Vec<&[T]>> = groups.iter().map(|g| g.iter().map(|&p| x.row(p)).collect()).collect();
            Some(estimate_fisher_diag(self.model, &rows)?)
        } else {
            None
        };
        let vectors = self.vectors_for(data, &x, groups, fisher.as_ref())?;
        let mut stats = fit_layer_gaussians(&vectors, epsilon)?;
        stats.kind = kind;
        stats.grouping = self.spec.grouping;
        stats.sigma_convention = convention;
        stats.layer_names = layer_names(self.model, self.spec.grouping);
        stats.fisher_diag = fisher;
        Ok(stats)
    }

    /// One row per full group, in group order. `stats` is required for the
    /// gradient kinds and must come from this checkpoint and group size.
    pub fn score(
        &self,
        data: &ImageBatch,
        kind: ScoreKind,
        stats: Option<&GaussianLayerStats>,
        keep_layer_scores: bool,
    ) -> Result<ScoreTable> {
        let (x, grouping) = self.prepare(data)?;
        let epoch = self.tag.epoch;
        let b = self.spec.b;
        let rows = if kind == ScoreKind::NegativeBpdBaseline {
            let lp = self.model.forward_log_prob(&x)?.per_sample_log_prob;
            let (d, levels) = (self.model.dims(), self.model.config().quantization_levels);
            grouping
                .groups
                .iter()
                .map(|g| {
                    let mut total = 0.0;
                    for &p in g {
                        total += bpd(lp[p], d, levels)?;
                    }
                    Ok(ScoreRow {
                        sample_ids: g.iter().map(|&p| data.ids()[p]).collect(),
                        checkpoint_epoch: epoch,
                        kind,
                        b,
                        score: total / g.len() as f64,
                        layer_scores: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            let stats = stats.ok_or_else(|| Error::InvalidArgument(format!("{kind} scores need fitted statistics")))?;
            self.check_stats(kind, stats)?;
            let vectors = self.vectors_for(data, &x, &grouping.groups, stats.fisher_diag.as_ref())?;
            vectors
                .into_iter()
                .map(|v| {
                    let (score, _) = aggregate_score(&v, stats)?;
                    Ok(ScoreRow {
                        sample_ids: v.member_ids,
                        checkpoint_epoch: epoch,
                        kind,
                        b,
                        score,
                        layer_scores: keep_layer_scores.then_some(v.values),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(ScoreTable {
            rows,
            dropped: grouping.dropped,
        })
    }

    fn check_stats(&self, kind: ScoreKind, stats: &GaussianLayerStats) -> Result<()> {
        if stats.checkpoint != self.tag {
            return Err(Error::Consistency(format!(
                "stats were fitted on checkpoint epoch {} ({}), scoring epoch {} ({})",
                stats.checkpoint.epoch, stats.checkpoint.param_hash, self.tag.epoch, self.tag.param_hash
            )));
        }
        if stats.b != self.spec.b || stats.kind != kind || stats.grouping != self.spec.grouping {
            return Err(Error::Consistency(format!(
                "stats are for b={} kind={} grouping={:?}, scoring b={} kind={kind} grouping={:?}",
                stats.b, stats.kind, stats.grouping, self.spec.b, self.spec.grouping
            )));
        }
        if kind == ScoreKind::DiagonalPreconditioned {
            match &stats.fisher_diag {
                Some(f) => f.check(self.model)?,
                None => return Err(Error::Consistency("diagonal stats carry no Fisher diagonal".into())),
            }
        }
        Ok(())
    }
}

/// Names of the scored layers under `grouping`.
pub(crate) fn layer_names<T: Real>(model: &FlowModel<T>, grouping: LayerGrouping) -> Vec<String> {
    model
        .layer_groups(grouping)
        .iter()
        .map(|g| match grouping {
            LayerGrouping::PerTensor => model.layers()[g[0]].name.clone(),
            LayerGrouping::PerSublayer => model.layers()[g[0]].sublayer(),
        })
        .collect()
}
