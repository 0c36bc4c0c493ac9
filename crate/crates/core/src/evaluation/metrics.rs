use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InsufficientData(format!("{name} scores are empty")));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{name} scores contain {bad}")));
    }
    Ok(())
}

/// Mann–Whitney AUROC with higher score = more OOD: the fraction of
/// (ID, OOD) pairs where the OOD score is larger, ties counting one half.
/// Runs in O(n log n) with an exact integer pair count.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_finite("ID", id_scores)?;
    check_finite("OOD", ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&v| (v, false))
        .chain(ood_scores.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the Mann–Whitney U statistic of the OOD sample
    let mut twice_u: u128 = 0;
    let mut ids_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut a, mut b) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                b += 1;
            } else {
                a += 1;
            }
            j += 1;
        }
        twice_u += 2 * b * ids_below + a * b;
        ids_below += a;
        i = j;
    }
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// Counts over uniform bins; `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by the total.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Histogram of `scores` on `bins` uniform bins over `range`. Values outside
/// the range are counted in the nearest end bin, so counts sum to the input
/// length.
pub fn histogram(scores: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    check_finite("histogram", scores)?;
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidArgument(format!("invalid histogram range ({lo}, {hi})")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in scores {
        let k = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Smallest and largest value of both sets.
pub fn shared_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Overlap coefficient `Σ_i min(p_i, q_i)` of the two normalized histograms
/// on `bins` shared bins spanning both sets. 1.0 when every score is equal.
pub fn ovl(id_scores: &[f64], ood_scores: &[f64], bins: usize) -> Result<f64> {
    check_finite("ID", id_scores)?;
    check_finite("OOD", ood_scores)?;
    let range = shared_range(id_scores, ood_scores);
    if range.0 == range.1 {
        return Ok(1.0);
    }
    let p = histogram(id_scores, bins, range)?.normalized();
    let q = histogram(ood_scores, bins, range)?.normalized();
    Ok(overlap_of(&p, &q).min(1.0))
}

/// `Σ min(p_i, q_i)` for two probability vectors on the same bins.
pub fn overlap_of(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn brute(id: &[f64], ood: &[f64]) -> f64 {
        let (mut greater, mut ties) = (0u128, 0u128);
        for &o in ood {
            for &i in id {
                if o > i {
                    greater += 1;
                } else if o == i {
                    ties += 1;
                }
            }
        }
        (2 * greater + ties) as f64 / (2 * id.len() as u128 * ood.len() as u128) as f64
    }

    #[test]
    fn small_worked_example() {
        let a = auroc(&[1.0, 2.0, 3.0], &[2.5, 4.0]).unwrap();
        assert_eq!(a, brute(&[1.0, 2.0, 3.0], &[2.5, 4.0]));
        assert!((a - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn separation_and_symmetry() {
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        let s = [1.0, 1.0, 2.0, 5.0];
        assert_eq!(auroc(&s, &s).unwrap(), 0.5);
        assert!(matches!(auroc(&[], &[1.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(auroc(&[f64::NAN], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn matches_brute_force_on_random_tied_instances() {
        let mut rng = SeededRng::new(21, 0);
        for inst in 0..200 {
            let n = 1 + rng.below(60);
            let m = 1 + rng.below(60);
            // coarse values on half the instances to force ties
            let levels = if inst % 2 == 0 { 5 } else { 1_000_000 };
            let mut draw = |k| (0..k).map(|_| rng.below(levels) as f64 * 0.25).collect::<Vec<_>>();
            let id = draw(n);
            let ood = draw(m);
            assert_eq!(auroc(&id, &ood).unwrap(), brute(&id, &ood), "instance {inst}");
        }
    }

    proptest! {
        #[test]
        fn complement_without_ties(v in proptest::collection::hash_set(-1_000_000i64..1_000_000, 2..80), split in 1usize..79) {
            let v: Vec<f64> = v.into_iter().map(|x| x as f64 / 7.0).collect();
            let k = split.min(v.len() - 1);
            let (a, b) = v.split_at(k);
            let s = auroc(a, b).unwrap() + auroc(b, a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_increasing_maps(a in proptest::collection::vec(-5.0f64..5.0, 1..40), b in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let f = |x: &f64| x.exp() * 3.0 + 1.0;
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(auroc(&a, &b).unwrap(), auroc(&fa, &fb).unwrap());
        }

        #[test]
        fn ovl_bounds_and_symmetry(a in proptest::collection::vec(-5.0f64..5.0, 1..60), b in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            let o = ovl(&a, &b, 100).unwrap();
            prop_assert!((0.0..=1.0).contains(&o));
            prop_assert!((o - ovl(&b, &a, 100).unwrap()).abs() < 1e-12);
            prop_assert!((ovl(&a, &a, 100).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ovl_cases() {
        assert_eq!(ovl(&[1.0, 2.0], &[1.0, 2.0], 100).unwrap(), 1.0);
        assert_eq!(ovl(&[0.0, 1.0], &[5.0, 6.0], 100).unwrap(), 0.0);
        assert_eq!(ovl(&[3.0, 3.0], &[3.0], 10).unwrap(), 1.0);
        assert!((overlap_of(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]) - 0.5).abs() < 1e-15);
        // same on three real bins
        let o = ovl(&[0.5, 1.5], &[1.5, 2.5], 3).unwrap();
        assert!((o - 0.5).abs() < 1e-15, "{o}");
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.31, 0.32, 0.33], 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts[3], 3);
        assert_eq!(h.edges.len(), 11);
        let mut rng = SeededRng::new(4, 0);
        let v: Vec<f64> = (0..997).map(|_| rng.normal()).collect();
        let h = histogram(&v, 17, (-1.0, 1.0)).unwrap();
        assert_eq!(h.total(), 997);
        assert!(histogram(&[], 3, (0.0, 1.0)).is_err());
        assert!(histogram(&[1.0], 0, (0.0, 1.0)).is_err());
        assert_eq!(histogram(&[2.0, 2.0], 4, (2.0, 2.0)).unwrap().counts, vec![2, 0, 0, 0]);
    }
}
