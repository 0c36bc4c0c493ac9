use serde::{Deserialize, Serialize};

use super::{FisherDiag, ScoreKind};
use crate::error::{Error, Result};
use crate::flow::LayerGrouping;
use crate::numerics::{moments, VarianceConvention};

/// Default stability constant added to every fitted variance.
pub const DEFAULT_EPSILON: f64 = 1e-10;
pub const STATS_VERSION: u32 = 1;

/// Identifies the parameters a score was computed with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTag {
    pub epoch: usize,
    /// Hex SHA-256 of the parameter blob.
    pub param_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScoreVector {
    pub values: Vec<f64>,
    pub checkpoint: ModelTag,
    /// Dataset ids of the group members.
    pub member_ids: Vec<usize>,
}

/// Whether the fitted second moment enters the aggregate as is or squared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaConvention {
    /// Denominator is the fitted variance.
    #[default]
    Variance,
    /// Denominator is the fitted variance squared (sensitivity runs).
    SquareFitted,
}

impl std::str::FromStr for SigmaConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(SigmaConvention::Variance),
            "square-fitted" => Ok(SigmaConvention::SquareFitted),
            _ => Err(Error::Config(format!(
                "unknown sigma convention '{s}' (variance | square-fitted)"
            ))),
        }
    }
}

/// Per-layer Gaussian fit bound to one checkpoint and group size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLayerStats {
    pub version: u32,
    pub checkpoint: ModelTag,
    pub b: usize,
    pub kind: ScoreKind,
    pub grouping: LayerGrouping,
    pub epsilon: f64,
    pub sigma_convention: SigmaConvention,
    pub n_fit: usize,
    pub layer_names: Vec<String>,
    pub mu: Vec<f64>,
    /// Population variance of each layer's scores.
    pub sigma2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher_diag: Option<FisherDiag>,
}

impl GaussianLayerStats {
    fn denominator(&self, l: usize) -> f64 {
        let v = match self.sigma_convention {
            SigmaConvention::Variance => self.sigma2[l],
            SigmaConvention::SquareFitted => self.sigma2[l] * self.sigma2[l],
        };
        v + self.epsilon
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: GaussianLayerStats =
            serde_json::from_str(s).map_err(|e| Error::format(e.column() as u64, format!("stats JSON: {e}")))?;
        if stats.version != STATS_VERSION {
            return Err(Error::format(0, format!("unsupported stats version {}", stats.version)));
        }
        if stats.mu.len() != stats.sigma2.len() {
            return Err(Error::Consistency("stats mu and sigma2 lengths differ".into()));
        }
        Ok(stats)
    }
}

/// Fits mean and population variance of every layer independently.
pub fn fit_layer_gaussians(vectors: &[LayerScoreVector], epsilon: f64) -> Result<GaussianLayerStats> {
    if vectors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} score vectors, need at least 2",
            vectors.len()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )));
    }
    let first = &vectors[0];
    let l = first.values.len();
    for v in vectors {
        if v.checkpoint != first.checkpoint {
            return Err(Error::Consistency(format!(
                "score vectors from checkpoints {} (epoch {}) and {} (epoch {})",
                first.checkpoint.param_hash, first.checkpoint.epoch, v.checkpoint.param_hash, v.checkpoint.epoch
            )));
        }
        if v.member_ids.len() != first.member_ids.len() {
            return Err(Error::Consistency("score vectors with different group sizes".into()));
        }
        if v.values.len() != l {
            return Err(Error::Consistency("score vectors with different layer counts".into()));
        }
    }
    let mut mu = Vec::with_capacity(l);
    let mut sigma2 = Vec::with_capacity(l);
    let mut column = vec![0.0; vectors.len()];
    for k in 0..l {
        for (c, v) in column.iter_mut().zip(vectors) {
            *c = v.values[k];
        }
        let m = moments(&column, VarianceConvention::Population)?;
        mu.push(m.mean);
        sigma2.push(m.variance);
    }
    Ok(GaussianLayerStats {
        version: STATS_VERSION,
        checkpoint: first.checkpoint.clone(),
        b: first.member_ids.len(),
        kind: ScoreKind::GradientAggregate,
        grouping: LayerGrouping::default(),
        epsilon,
        sigma_convention: SigmaConvention::default(),
        n_fit: vectors.len(),
        layer_names: Vec::new(),
        mu,
        sigma2,
        fisher_diag: None,
    })
}

/// `½ Σ_l [(S_l − μ_l)² / (σ²_l + ε) + ln 2π(σ²_l + ε)]`; higher is more OOD.
/// Returns the total and the per-layer terms.
pub fn aggregate_score(v: &LayerScoreVector, stats: &GaussianLayerStats) -> Result<(f64, Vec<f64>)> {
    if v.checkpoint != stats.checkpoint {
        return Err(Error::Consistency(format!(
            "scores from checkpoint epoch {} ({}) but stats fitted on epoch {} ({})",
            v.checkpoint.epoch, v.checkpoint.param_hash, stats.checkpoint.epoch, stats.checkpoint.param_hash
        )));
    }
    if v.values.len() != stats.mu.len() {
        return Err(Error::Consistency(format!(
            "{} layer scores but stats cover {} layers",
            v.values.len(),
            stats.mu.len()
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let terms: Vec<f64> = v
        .values
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            let d = stats.denominator(l);
            let r = s - stats.mu[l];
            0.5 * (r * r / d + (two_pi * d).ln())
        })
        .collect();
    let total = terms.iter().sum();
    Ok((total, terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Id,
    Ood,
}

/// Decision threshold with a note on where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub provenance: String,
}

impl Threshold {
    pub fn fixed(value: f64) -> Self {
        Threshold {
            value,
            provenance: format!("fixed value {value}"),
        }
    }

    /// The `q` quantile of in-distribution scores.
    pub fn id_quantile(id_scores: &[f64], q: f64) -> Result<Self> {
        Ok(Threshold {
            value: quantile(id_scores, q)?,
            provenance: format!("quantile {q} of {} in-distribution scores", id_scores.len()),
        })
    }
}

/// OOD iff `score > threshold`.
pub fn classify(score: f64, threshold: &Threshold) -> Label {
    if score > threshold.value {
        Label::Ood
    } else {
        Label::Id
    }
}

/// Linearly interpolated quantile (`(n − 1)·q` position in sorted order).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in quantile input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (s.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}
