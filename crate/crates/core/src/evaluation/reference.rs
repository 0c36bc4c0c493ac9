//! Published full-scale results, kept for side-by-side reporting. They are
//! not reproducible at desk scale and are never asserted against runs.

use serde::Serialize;

/// AUROC of one (train, test) pair at an early checkpoint and at convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceCell {
    pub id_dataset: &'static str,
    pub ood_dataset: &'static str,
    pub b: usize,
    pub early_epoch: usize,
    pub early_auroc: f64,
    pub full_auroc: f64,
}

/// Overlap coefficient and AUROC of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceOverlap {
    pub id_dataset: &'static str,
    /// `None` for the fully trained model.
    pub epoch: Option<usize>,
    pub ovl: f64,
    pub auroc: f64,
}

pub const REFERENCE_CELLS: [ReferenceCell; 2] = [
    ReferenceCell {
        id_dataset: "SVHN",
        ood_dataset: "CelebA",
        b: 1,
        early_epoch: 10,
        early_auroc: 0.9852,
        full_auroc: 0.9377,
    },
    ReferenceCell {
        id_dataset: "KMNIST",
        ood_dataset: "FashionMNIST",
        b: 1,
        early_epoch: 30,
        early_auroc: 0.7315,
        full_auroc: 0.6737,
    },
];

pub const REFERENCE_OVERLAPS: [ReferenceOverlap; 2] = [
    ReferenceOverlap {
        id_dataset: "CIFAR-10",
        epoch: Some(50),
        ovl: 0.8357,
        auroc: 0.6310,
    },
    ReferenceOverlap {
        id_dataset: "CIFAR-10",
        epoch: None,
        ovl: 0.8635,
        auroc: 0.5502,
    },
];
