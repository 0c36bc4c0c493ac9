//! Numeric kernels shared across the crate.

pub(crate) mod logit;
mod real;
mod rng;
pub use rng::RngState;
mod stats;
mod tensor;

pub use logit::{logit_inverse, logit_preprocess, LogitOutput, DEFAULT_LOGIT_ALPHA};
pub use real::{Precision, Real};
pub use rng::{derive_stream, SeededRng};
pub use stats::{gaussian_log_pdf, gaussian_log_pdf_scalar, moments, Moments, VarianceConvention};
pub use tensor::Tensor;
