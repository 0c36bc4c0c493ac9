//! Browser bindings for three small demos: separability of two score lists,
//! likelihood vs likelihood-ratio AUC on a discrete pair, and previews of
//! the synthetic image families.
//!
//! Every export returns JSON (or raw pixels) so the page needs no glue code
//! beyond `JSON.parse`.

use std::str::FromStr;

use gradflow::datasets::{synth_generate, DataSource, SyntheticSpec};
use gradflow::evaluation::{auroc, histogram, np_lemma_demo, overlap_of, shared_range, DiscreteDistributionPair};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Numbers separated by whitespace, commas or semicolons.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

/// AUROC, OVL and shared-range histograms of two score lists, as JSON.
pub fn separation_json(id_text: &str, ood_text: &str, bins: usize) -> Result<String, String> {
    let (id, ood) = (parse_numbers(id_text)?, parse_numbers(ood_text)?);
    if id.is_empty() || ood.is_empty() {
        return Err("both score lists need at least one value".into());
    }
    let a = auroc(&id, &ood).map_err(|e| e.to_string())?;
    let range = shared_range(&id, &ood);
    let hi = histogram(&id, bins, range).map_err(|e| e.to_string())?;
    let ho = histogram(&ood, bins, range).map_err(|e| e.to_string())?;
    let (pi, po) = (hi.normalized(), ho.normalized());
    let ovl = if range.0 == range.1 { 1.0 } else { overlap_of(&pi, &po) };
    Ok(json!({
        "auroc": a,
        "ovl": ovl,
        "edges": hi.edges,
        "id": pi,
        "ood": po,
        "n_id": id.len(),
        "n_ood": ood.len(),
    })
    .to_string())
}

/// Likelihood and likelihood-ratio AUC of a pair of discrete distributions.
pub fn np_demo_json(p_text: &str, q_text: &str) -> Result<String, String> {
    let pair =
        DiscreteDistributionPair::new(parse_numbers(p_text)?, parse_numbers(q_text)?).map_err(|e| e.to_string())?;
    let r = np_lemma_demo(&pair);
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

/// `n` images of a synthetic family tiled in one row with one-pixel gutters,
/// as RGBA bytes. Width is `n * (side + 1) - 1`, height `side`.
pub fn preview_rgba(source: &str, n: usize, side: usize, seed: u64) -> Result<Vec<u8>, String> {
    let family = match DataSource::from_str(source).map_err(|e| e.to_string())? {
        DataSource::Synthetic(f) => f,
        DataSource::Idx(_) => return Err("only synthetic sources can be previewed".into()),
    };
    if n == 0 || side == 0 || n > 64 || side > 64 {
        return Err("n and side must be in 1..=64".into());
    }
    let batch = synth_generate(&SyntheticSpec::new(family, [1, side, side]), n, seed).map_err(|e| e.to_string())?;
    let top = (batch.levels() - 1) as f64;
    let width = n * (side + 1) - 1;
    let mut out = vec![255u8; width * side * 4];
    for i in 0..n {
        for (k, &v) in batch.image(i).iter().enumerate() {
            let (y, x) = (k / side, i * (side + 1) + k % side);
            let g = (v as f64 / top * 255.0).round() as u8;
            out[(y * width + x) * 4..][..3].fill(g);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn separation(id_scores: &str, ood_scores: &str, bins: usize) -> Result<String, JsValue> {
    separation_json(id_scores, ood_scores, bins).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn np_demo(p: &str, q: &str) -> Result<String, JsValue> {
    np_demo_json(p, q).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synthetic_preview(source: &str, n: usize, side: usize, seed: u64) -> Result<Vec<u8>, JsValue> {
    preview_rgba(source, n, side, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_of_shifted_lists() {
        let v: serde_json::Value = serde_json::from_str(&separation_json("1 2 3", "2.5, 4", 10).unwrap()).unwrap();
        assert_eq!(v["auroc"], 5.0 / 6.0);
        assert_eq!(v["edges"].as_array().unwrap().len(), 11);
        assert!(separation_json("1 x", "2", 10).is_err());
    }

    #[test]
    fn np_demo_worked_pair() {
        let v: serde_json::Value =
            serde_json::from_str(&np_demo_json("0.4 0.35 0.25", "0.5 0.1 0.4").unwrap()).unwrap();
        assert!((v["auc_true"].as_f64().unwrap() - 0.5075).abs() < 1e-12);
        assert!((v["auc_ratio"].as_f64().unwrap() - 0.6425).abs() < 1e-12);
        assert!(np_demo_json("0.7 0.5", "0.5 0.5").is_err());
    }

    #[test]
    fn preview_layout() {
        let px = preview_rgba("synthetic:flat-blob", 3, 8, 0).unwrap();
        assert_eq!(px.len(), (3 * 9 - 1) * 8 * 4);
        // gutter column stays white
        assert_eq!(&px[8 * 4..8 * 4 + 4], &[255, 255, 255, 255]);
        assert!(preview_rgba("idx:x.idx", 1, 8, 0).is_err());
    }
}
