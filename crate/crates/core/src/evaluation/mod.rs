//! Separability metrics, pair reports and checkpoint sweeps.

mod metrics;
mod npdemo;
mod reference;
mod report;
mod sweep;

pub use metrics::{auroc, histogram, overlap_of, ovl, shared_range, Histogram};
pub use npdemo::{np_lemma_demo, DiscreteDistributionPair, NpDemoResult};
pub use reference::{ReferenceCell, ReferenceOverlap, REFERENCE_CELLS, REFERENCE_OVERLAPS};
pub use report::{
    evaluate_pair, histogram_svg, EvalPairReport, PairKey, SweepRow, SweepTable, REPORT_VERSION, SWEEP_CSV_HEADER,
};
pub use sweep::{
    checkpoint_path, figure_name, score_file_stem, sweep_report, NamedScores, SweepData, SweepOptions, SweepOutcome,
};
