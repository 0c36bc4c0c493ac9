use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowModel, LayerGrouping};
use crate::numerics::{Real, Tensor};

/// Squared norms below this are clamped before the log.
pub const NORM_FLOOR: f64 = 1e-30;
/// Lower bound on each diagonal Fisher entry.
pub const FISHER_FLOOR: f64 = 1e-8;

fn group_norms<T: Real>(
    model: &FlowModel<T>,
    grads: &[Tensor<T>],
    grouping: LayerGrouping,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    let layers = model.layers();
    model
        .layer_groups(grouping)
        .iter()
        .map(|members| {
            let mut n2 = 0.0;
            for &t in members {
                for (k, &g) in grads[t].as_slice().iter().enumerate() {
                    let g = g.as_f64();
                    n2 += g * g / weight(t, k);
                }
            }
            if !n2.is_finite() {
                return Err(Error::numeric(
                    format!("layer {}", layers[members[0]].name),
                    format!("non-finite squared gradient norm {n2}"),
                ));
            }
            Ok(n2.max(NORM_FLOOR).ln())
        })
        .collect()
}

/// `S_l = ln max(||g_l||², 1e-30)` for the gradient of the summed
/// log-likelihood of `rows` (one flattened image each).
pub fn layer_scores<T: Real>(model: &FlowModel<T>, rows: &[&[T]], grouping: LayerGrouping) -> Result<Vec<f64>> {
    let (_, grads) = model.group_gradient(rows)?;
    group_norms(model, &grads, grouping, |_, _| 1.0)
}

/// Diagonal Fisher estimate, one entry per parameter in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiag {
    pub values: Vec<Vec<f64>>,
    /// Number of gradient observations averaged.
    pub count: usize,
}

impl FisherDiag {
    pub fn check<T: Real>(&self, model: &FlowModel<T>) -> Result<()> {
        let ok = self.values.len() == model.layers().len()
            && self
                .values
                .iter()
                .zip(model.layers())
                .all(|(v, l)| v.len() == l.numel());
        if ok {
            Ok(())
        } else {
            Err(Error::Consistency(
                "Fisher diagonal does not match the model's parameter layout".into(),
            ))
        }
    }
}

/// Running mean of squared group gradients, floored at [`FISHER_FLOOR`].
pub fn estimate_fisher_diag<T: Real>(model: &FlowModel<T>, groups: &[Vec<&[T]>]) -> Result<FisherDiag> {
    if groups.is_empty() {
        return Err(Error::InsufficientData(
            "no groups to estimate the Fisher diagonal".into(),
        ));
    }
    let mut acc: Vec<Vec<f64>> = model.layers().iter().map(|l| vec![0.0; l.numel()]).collect();
    for (k, rows) in groups.iter().enumerate() {
        let (_, grads) = model.group_gradient(rows)?;
        let w = 1.0 / (k + 1) as f64;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (m, &v) in a.iter_mut().zip(g.as_slice()) {
                let v = v.as_f64();
                *m += (v * v - *m) * w;
            }
        }
    }
    for v in acc.iter_mut().flatten() {
        *v = v.max(FISHER_FLOOR);
    }
    Ok(FisherDiag {
        values: acc,
        count: groups.len(),
    })
}

/// `S_l = ln max(Σ_p g_p² / f_p, 1e-30)`.
pub fn diagonal_preconditioned_scores<T: Real>(
    model: &FlowModel<T>,
    rows: &[&[T]],
    fisher: &FisherDiag,
    grouping: LayerGrouping,
) -> Result<Vec<f64>> {
    fisher.check(model)?;
    let (_, grads) = model.group_gradient(rows)?;
    group_norms(model, &grads, grouping, |t, k| fisher.values[t][k])
}
