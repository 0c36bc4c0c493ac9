//! Invertible GLOW-style flow with exact log-likelihood and analytic gradients.

mod config;
mod conv;
mod layers;
mod linalg;
mod model;
mod pgm;

pub(crate) use config::hex;
pub use config::{CouplingKind, FlowConfig, PRESET_NAMES};
pub use model::{bpd, ActNormInitReport, FlowModel, LayerGrouping, LayerRef, LogProbResult, MixBuffer};
pub use pgm::{encode_pgm_grid, write_pgm_grid};
