use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-density in nats of `N(mean, variance)` at every element of `z`.
pub fn gaussian_log_pdf<T: Real>(z: &[T], mean: f64, variance: f64) -> Result<Vec<f64>> {
    check_variance(variance)?;
    let norm = LN_2PI + variance.ln();
    Ok(z.iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            -0.5 * (d * d / variance + norm)
        })
        .collect())
}

pub fn gaussian_log_pdf_scalar(z: f64, mean: f64, variance: f64) -> Result<f64> {
    check_variance(variance)?;
    let d = z - mean;
    Ok(-0.5 * (d * d / variance + LN_2PI + variance.ln()))
}

fn check_variance(variance: f64) -> Result<()> {
    if variance > 0.0 && variance.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "variance must be positive and finite, got {variance}"
        )))
    }
}

/// Divisor used for the variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

/// Mean and variance by Welford's single-pass update.
pub fn moments(values: &[f64], convention: VarianceConvention) -> Result<Moments> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "moments need at least 2 values, got {}",
            values.len()
        )));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = values.len() as f64;
    let divisor = match convention {
        VarianceConvention::Population => n,
        VarianceConvention::Sample => n - 1.0,
    };
    Ok(Moments {
        mean,
        variance: (m2 / divisor).max(0.0),
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_at_mode() {
        let v = gaussian_log_pdf_scalar(0.0, 0.0, 1.0).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn at_mean_only_normalizer_remains() {
        for var in [0.01, 0.5, 3.0, 1e4] {
            let v = gaussian_log_pdf_scalar(1.25, 1.25, var).unwrap();
            let expected = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn off_mode_value_matches_extended_precision_reference() {
        // -0.5 * ((1.4)^2 / 2 + ln(4 pi)) evaluated to 30 digits with mpmath:
        // -1.75551212348464539648894579713
        let v = gaussian_log_pdf(&[1.7f64], 0.3, 2.0).unwrap()[0];
        assert!((v - (-1.755_512_123_484_645_4)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn non_positive_variance_rejected() {
        assert!(matches!(
            gaussian_log_pdf(&[0.0f64], 0.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(gaussian_log_pdf_scalar(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        for (mean, var) in [(0.0, 1.0), (2.5, 0.3), (-1.0, 7.0)] {
            let sd: f64 = f64::sqrt(var);
            let (lo, hi) = (mean - 8.0 * sd, mean + 8.0 * sd);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
            let logs = gaussian_log_pdf(&xs, mean, var).unwrap();
            let mut acc = 0.0;
            for i in 0..n {
                acc += 0.5 * h * (logs[i].exp() + logs[i + 1].exp());
            }
            assert!((acc - 1.0).abs() < 1e-6, "integral {acc}");
        }
    }

    #[test]
    fn hand_moments() {
        let m = moments(&[1.0, 2.0, 3.0], VarianceConvention::Population).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.variance - 2.0 / 3.0).abs() < 1e-15);
        let s = moments(&[1.0, 2.0, 3.0], VarianceConvention::Sample).unwrap();
        assert!((s.variance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_has_zero_variance() {
        let m = moments(&[4.5; 17], VarianceConvention::Population).unwrap();
        assert_eq!(m.mean, 4.5);
        assert_eq!(m.variance, 0.0);
    }

    #[test]
    fn too_short_is_insufficient() {
        assert!(matches!(
            moments(&[1.0], VarianceConvention::Population),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn monte_carlo_standard_normal() {
        let mut rng = SeededRng::new(2024, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        let m = moments(&xs, VarianceConvention::Population).unwrap();
        assert!(m.mean.abs() < 0.05);
        assert!((m.variance - 1.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn moments_permutation_invariant(
            xs in proptest::collection::vec(-1e3f64..1e3, 2..60),
            seed in any::<u64>(),
        ) {
            let a = moments(&xs, VarianceConvention::Population).unwrap();
            let mut ys = xs.clone();
            SeededRng::new(seed, 0).shuffle(&mut ys);
            let b = moments(&ys, VarianceConvention::Population).unwrap();
            let scale = xs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!((a.mean - b.mean).abs() <= 1e-12 * scale);
            prop_assert!((a.variance - b.variance).abs() <= 1e-10 * scale * scale);
        }
    }
}
