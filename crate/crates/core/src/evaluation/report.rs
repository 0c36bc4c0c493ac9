use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{auroc, histogram, ovl, shared_range, Histogram};
use crate::error::Result;
use crate::scoring::ScoreKind;

pub const REPORT_VERSION: u32 = 1;

/// Separability of one (ID, OOD) pair at one checkpoint and group size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPairReport {
    pub id_dataset: String,
    pub ood_dataset: String,
    pub checkpoint_epoch: usize,
    pub b: usize,
    pub kind: ScoreKind,
    pub auroc: f64,
    pub ovl: f64,
    /// Shared-bin histograms; `id.edges == ood.edges`.
    pub id_histogram: Histogram,
    pub ood_histogram: Histogram,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Labels of an evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairKey {
    pub id_dataset: String,
    pub ood_dataset: String,
    pub checkpoint_epoch: usize,
    pub b: usize,
    pub kind: ScoreKind,
}

pub fn evaluate_pair(key: PairKey, id_scores: &[f64], ood_scores: &[f64], bins: usize) -> Result<EvalPairReport> {
    let range = shared_range(id_scores, ood_scores);
    Ok(EvalPairReport {
        auroc: auroc(id_scores, ood_scores)?,
        ovl: ovl(id_scores, ood_scores, bins)?,
        id_histogram: histogram(id_scores, bins, range)?,
        ood_histogram: histogram(ood_scores, bins, range)?,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
        id_dataset: key.id_dataset,
        ood_dataset: key.ood_dataset,
        checkpoint_epoch: key.checkpoint_epoch,
        b: key.b,
        kind: key.kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub id: String,
    pub ood: String,
    pub epoch: usize,
    pub b: usize,
    pub kind: ScoreKind,
    pub auroc: f64,
    pub ovl: f64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Highest AUROC within its (id, ood, b, kind) group; ties all marked.
    pub is_max: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "id;ood;epoch;b;kind;auroc;ovl;n_id;n_ood;is_max";

impl SweepTable {
    pub fn from_reports(reports: &[EvalPairReport]) -> Self {
        let mut t = SweepTable {
            rows: reports
                .iter()
                .map(|r| SweepRow {
                    id: r.id_dataset.clone(),
                    ood: r.ood_dataset.clone(),
                    epoch: r.checkpoint_epoch,
                    b: r.b,
                    kind: r.kind,
                    auroc: r.auroc,
                    ovl: r.ovl,
                    n_id: r.n_id,
                    n_ood: r.n_ood,
                    is_max: false,
                })
                .collect(),
        };
        t.mark_max();
        t
    }

    /// Recomputes `is_max` for every (id, ood, b, kind) group.
    pub fn mark_max(&mut self) {
        let same = |a: &SweepRow, b: &SweepRow| a.id == b.id && a.ood == b.ood && a.b == b.b && a.kind == b.kind;
        let maxima: Vec<f64> = self
            .rows
            .iter()
            .map(|r| {
                self.rows
                    .iter()
                    .filter(|o| same(r, o))
                    .map(|o| o.auroc)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (r, m) in self.rows.iter_mut().zip(maxima) {
            r.is_max = r.auroc == m;
        }
    }

    /// Rows of one group in epoch order.
    pub fn group(&self, id: &str, ood: &str, b: usize, kind: ScoreKind) -> Vec<&SweepRow> {
        let mut g: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.id == id && r.ood == ood && r.b == b && r.kind == kind)
            .collect();
        g.sort_by_key(|r| r.epoch);
        g
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{};{};{};{};{};{:.6};{:.6};{};{};{}",
                r.id, r.ood, r.epoch, r.b, r.kind, r.auroc, r.ovl, r.n_id, r.n_ood, r.is_max
            )
            .expect("string write");
        }
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Two overlaid step histograms (ID blue, OOD red) on shared axes, as
/// probability per bin.
pub fn histogram_svg(r: &EvalPairReport) -> String {
    let (w, h) = (640.0, 360.0);
    let (ml, mr, mt, mb) = (56.0, 16.0, 40.0, 44.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let p = r.id_histogram.normalized();
    let q = r.ood_histogram.normalized();
    let ymax = p.iter().chain(&q).fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let bins = p.len();
    let step = |v: &[f64]| {
        let mut d = format!("M{:.2},{:.2}", ml, mt + ph);
        for (k, &y) in v.iter().enumerate() {
            let x0 = ml + pw * k as f64 / bins as f64;
            let x1 = ml + pw * (k + 1) as f64 / bins as f64;
            let yy = mt + ph * (1.0 - y / ymax);
            write!(d, " L{x0:.2},{yy:.2} L{x1:.2},{yy:.2}").expect("string write");
        }
        write!(d, " L{:.2},{:.2} Z", ml + pw, mt + ph).expect("string write");
        d
    };
    let edges = &r.id_histogram.edges;
    let title = format!(
        "{} vs {} | epoch {} | b={} | {} | AUROC {:.4} OVL {:.4}",
        r.id_dataset, r.ood_dataset, r.checkpoint_epoch, r.b, r.kind, r.auroc, r.ovl
    );
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(&title)
    )
    .unwrap();
    writeln!(
        s,
        r##"<path d="{}" fill="#1f77b4" fill-opacity="0.35" stroke="#1f77b4"/>"##,
        step(&p)
    )
    .unwrap();
    writeln!(
        s,
        r##"<path d="{}" fill="#d62728" fill-opacity="0.35" stroke="#d62728"/>"##,
        step(&q)
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{ml}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        mt + ph,
        ml + pw,
        mt + ph
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{:.1}" stroke="black"/>"#,
        mt + ph
    )
    .unwrap();
    let lo = edges.first().copied().unwrap_or(0.0);
    let hi = edges.last().copied().unwrap_or(0.0);
    for (x, v, anchor) in [(ml, lo, "start"), (ml + pw, hi, "end")] {
        writeln!(s, r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#, mt + ph + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">score (higher = more OOD)</text>"#, ml + pw / 2.0, h - 8.0).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{ymax:.3}</text>"#,
        ml - 4.0,
        mt + 4.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">0</text>"#,
        ml - 4.0,
        mt + ph
    )
    .unwrap();
    writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="#1f77b4" text-anchor="end">ID: {} (n={})</text>"##, ml + pw - 4.0, mt + 14.0, xml_escape(&r.id_dataset), r.n_id).unwrap();
    writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="#d62728" text-anchor="end">OOD: {} (n={})</text>"##, ml + pw - 4.0, mt + 28.0, xml_escape(&r.ood_dataset), r.n_ood).unwrap();
    s.push_str("</svg>\n");
    s
}
