//! Layer-wise gradient-norm OOD scores.
//!
//! For a group of `b` samples the score of layer `l` is
//! `S_l = ln ||d/dθ_l Σ log p(x)||²`. Per-layer Gaussians fitted on held-out
//! in-distribution data turn the score vector into one number, the Gaussian
//! negative log-likelihood of the vector.

mod layer;
mod stats;
mod table;

pub use layer::{
    diagonal_preconditioned_scores, estimate_fisher_diag, layer_scores, FisherDiag, FISHER_FLOOR, NORM_FLOOR,
};
pub use stats::{
    aggregate_score, classify, fit_layer_gaussians, quantile, GaussianLayerStats, Label, LayerScoreVector, ModelTag,
    SigmaConvention, Threshold, DEFAULT_EPSILON, STATS_VERSION,
};
pub use table::{make_groups, Grouping, ScoreBatchSpec, ScoreKind, ScoreRow, ScoreTable, Scorer, SCORE_CSV_HEADER};
