//! Gradient-based out-of-distribution scoring with GLOW-style normalizing flows.
//!
//! The crate trains a multi-scale flow by maximum likelihood, checkpoints it at
//! chosen epochs, and scores new data by the log squared norm of the per-layer
//! log-likelihood gradient. Per-layer Gaussians fitted on held-out in-distribution
//! data combine those layer scores into a single Gaussian negative log-likelihood.
//! Evaluation helpers compute AUROC, overlap coefficients and histograms so the
//! separability of early and late checkpoints can be compared.
//!
//! Module map:
//! - [`numerics`]: tensors, seeded RNG streams, moments, Gaussian densities, logit preprocessing
//! - [`flow`]: the invertible model with exact log-likelihood and analytic gradients
//! - [`training`]: Adam, the epoch loop and the checkpoint file format
//! - [`datasets`]: IDX files, synthetic image families, splits and evaluation sampling
//! - [`scoring`]: layer scores, Gaussian fits, aggregate score and the BPD baseline
//! - [`evaluation`]: AUROC, OVL, histograms, the likelihood-ratio demo and sweeps
//! - [`cli`]: configuration and the `gradflow` command implementations

pub mod cli;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod fsutil;
pub mod numerics;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
