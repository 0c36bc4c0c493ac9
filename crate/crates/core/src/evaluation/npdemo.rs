//! Likelihood versus likelihood-ratio statistics on a finite support.
//!
//! With in-distribution P and out-distribution Q, ranking points by P(x)
//! alone can misorder points that Q also favours; ranking by P(x)/Q(x) is the
//! most powerful test, so its AUC is never lower.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistributionPair {
    p: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpDemoResult {
    /// AUC of the statistic P(x).
    pub auc_true: f64,
    /// AUC of the statistic P(x)/Q(x).
    pub auc_ratio: f64,
    /// Σ P_i/Q_i over the shared support; P/Q divided by C sums to 1 there.
    pub c: f64,
}

impl DiscreteDistributionPair {
    /// Both vectors must have the same length, be nonnegative and sum to 1
    /// within 1e-12.
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() {
            return Err(Error::Domain(format!(
                "support sizes {} and {} must match and be nonzero",
                p.len(),
                q.len()
            )));
        }
        for (name, v) in [("P", &p), ("Q", &q)] {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Domain(format!("{name} has negative or non-finite entries")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
            }
        }
        Ok(DiscreteDistributionPair { p, q })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn has_overlap(&self) -> bool {
        self.p.iter().zip(&self.q).any(|(a, b)| *a > 0.0 && *b > 0.0)
    }

    /// Parses two-column text (`p q` per line; `#` comments and blank lines
    /// skipped).
    pub fn from_columns(text: &str) -> Result<Self> {
        let (mut p, mut q) = (Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Domain(format!("line {}: '{s}' is not a number", n + 1)))
            };
            if f.len() != 2 {
                return Err(Error::Domain(format!("line {}: expected two columns", n + 1)));
            }
            p.push(parse(f[0])?);
            q.push(parse(f[1])?);
        }
        Self::new(p, q)
    }
}

/// `P(x → y) ranked higher` AUC of a statistic over x ~ P, y ~ Q, ties one half.
fn pair_auc(pair: &DiscreteDistributionPair, stat: &[f64]) -> f64 {
    let mut auc = 0.0;
    for (i, &pi) in pair.p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for (j, &qj) in pair.q.iter().enumerate() {
            if qj == 0.0 {
                continue;
            }
            let w = pi * qj;
            if stat[i] > stat[j] {
                auc += w;
            } else if stat[i] == stat[j] {
                auc += 0.5 * w;
            }
        }
    }
    auc
}

/// Exhaustive AUCs of P(x) and P(x)/Q(x). Points with Q = 0 and P > 0 get
/// ratio +∞.
pub fn np_lemma_demo(pair: &DiscreteDistributionPair) -> NpDemoResult {
    let ratio: Vec<f64> = pair
        .p
        .iter()
        .zip(&pair.q)
        .map(|(&p, &q)| {
            if q > 0.0 {
                p / q
            } else if p > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let c = pair
        .p
        .iter()
        .zip(&pair.q)
        .filter(|(p, q)| **p > 0.0 && **q > 0.0)
        .map(|(p, q)| p / q)
        .sum();
    NpDemoResult {
        auc_true: pair_auc(pair, &pair.p),
        auc_ratio: pair_auc(pair, &ratio),
        c,
    }
}
