use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{evaluate_pair, histogram_svg, EvalPairReport, PairKey, SweepTable, REPORT_VERSION};
use crate::datasets::{sample_eval_set, ImageBatch};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::{Precision, Real};
use crate::scoring::{GaussianLayerStats, ModelTag, ScoreBatchSpec, ScoreKind, ScoreTable, Scorer, SigmaConvention};
use crate::training::{checkpoint_file_name, load_checkpoint, read_checkpoint_header};

/// Data for a sweep. `id_fit` and `id_test` may be the same batch, which
/// reproduces fitting on the evaluation split.
#[derive(Debug, Clone)]
pub struct SweepData {
    pub id_label: String,
    pub id_fit: ImageBatch,
    pub id_test: ImageBatch,
    pub oods: Vec<(String, ImageBatch)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub epochs: Vec<usize>,
    pub b_list: Vec<usize>,
    pub kinds: Vec<ScoreKind>,
    /// Samples drawn from each test set.
    pub n_eval: usize,
    /// Cap on the number of fit groups.
    pub n_fit: usize,
    pub epsilon: f64,
    pub sigma_convention: SigmaConvention,
    pub bins: usize,
    pub seed: u64,
    pub keep_layer_scores: bool,
}

/// A score table destined for `scores/<name>.csv`.
#[derive(Debug, Clone)]
pub struct NamedScores {
    pub name: String,
    pub table: ScoreTable,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub table: SweepTable,
    pub reports: Vec<EvalPairReport>,
    pub scores: Vec<NamedScores>,
    pub stats: Vec<(String, GaussianLayerStats)>,
    /// Requested epochs with no checkpoint file; they are skipped.
    pub missing_epochs: Vec<usize>,
    /// Arithmetic precision of each evaluated checkpoint.
    pub precision: Vec<(usize, Precision)>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    version: u32,
    rows: &'a SweepTable,
    reports: &'a [EvalPairReport],
    missing_epochs: &'a [usize],
    precision: &'a [(usize, Precision)],
    notes: &'a [String],
}

impl SweepOutcome {
    pub fn to_json(&self) -> String {
        let doc = SweepJson {
            version: REPORT_VERSION,
            rows: &self.table,
            reports: &self.reports,
            missing_epochs: &self.missing_epochs,
            precision: &self.precision,
            notes: &self.notes,
        };
        serde_json::to_string_pretty(&doc).expect("sweep report serializes") + "\n"
    }

    /// Writes `reports/sweep.{csv,json}`, `scores/*.csv`, `scores/*.json`
    /// and `figures/*.svg` under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_atomic(&out_dir.join("reports/sweep.csv"), self.table.to_csv().as_bytes())?;
        write_atomic(&out_dir.join("reports/sweep.json"), self.to_json().as_bytes())?;
        for s in &self.scores {
            write_atomic(
                &out_dir.join(format!("scores/{}.csv", s.name)),
                s.table.to_csv().as_bytes(),
            )?;
        }
        for (name, st) in &self.stats {
            write_atomic(&out_dir.join(format!("scores/{name}.json")), st.to_json().as_bytes())?;
        }
        for r in &self.reports {
            write_atomic(
                &out_dir.join(format!("figures/{}.svg", figure_name(r))),
                histogram_svg(r).as_bytes(),
            )?;
        }
        Ok(())
    }
}

pub fn figure_name(r: &EvalPairReport) -> String {
    format!(
        "hist-{}-vs-{}-e{:04}-b{}-{}",
        r.id_dataset, r.ood_dataset, r.checkpoint_epoch, r.b, r.kind
    )
}

pub fn score_file_stem(label: &str, epoch: usize, b: usize, kind: ScoreKind) -> String {
    format!("{label}-e{epoch:04}-b{b}-{kind}")
}

/// Path of the checkpoint for `epoch` inside a run directory.
pub fn checkpoint_path(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join("checkpoints").join(checkpoint_file_name(epoch))
}

/// Evaluates every requested checkpoint of a run against each OOD set, for
/// every group size and score kind. Statistics are refit per checkpoint on
/// `data.id_fit`; missing checkpoints are recorded and skipped.
pub fn sweep_report(run_dir: &Path, data: &SweepData, opts: &SweepOptions) -> Result<SweepOutcome> {
    if data.oods.is_empty() {
        return Err(Error::Config("sweep needs at least one OOD dataset".into()));
    }
    if opts.b_list.is_empty() || opts.kinds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one group size and one score kind".into(),
        ));
    }
    let id_eval = sample_eval_set(&data.id_test, opts.n_eval, opts.seed)?;
    let oods = data
        .oods
        .iter()
        .map(|(label, batch)| Ok((label.clone(), sample_eval_set(batch, opts.n_eval, opts.seed)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = SweepOutcome {
        table: SweepTable::default(),
        reports: Vec::new(),
        scores: Vec::new(),
        stats: Vec::new(),
        missing_epochs: Vec::new(),
        precision: Vec::new(),
        notes: Vec::new(),
    };
    for &b in &opts.b_list {
        if !ScoreBatchSpec::new(b, opts.seed).is_standard_b() {
            out.notes
                .push(format!("group size b={b} is outside the standard set {{1, 5}}"));
        }
        for (label, n) in std::iter::once((&data.id_label, id_eval.len())).chain(oods.iter().map(|(l, x)| (l, x.len())))
        {
            if n % b != 0 {
                out.notes.push(format!("{label}: b={b} drops {} of {n} samples", n % b));
            }
        }
    }
    for &epoch in &opts.epochs {
        let path = checkpoint_path(run_dir, epoch);
        if !path.exists() {
            out.missing_epochs.push(epoch);
            continue;
        }
        let precision = read_checkpoint_header(&path)?.precision;
        out.precision.push((epoch, precision));
        match precision {
            Precision::F32 => evaluate_checkpoint::<f32>(&path, data, &id_eval, &oods, opts, &mut out)?,
            Precision::F64 => evaluate_checkpoint::<f64>(&path, data, &id_eval, &oods, opts, &mut out)?,
        }
    }
    out.table = SweepTable::from_reports(&out.reports);
    Ok(out)
}

fn evaluate_checkpoint<T: Real>(
    path: &Path,
    data: &SweepData,
    id_eval: &ImageBatch,
    oods: &[(String, ImageBatch)],
    opts: &SweepOptions,
    out: &mut SweepOutcome,
) -> Result<()> {
    let ck = load_checkpoint::<T>(path)?;
    let tag = ModelTag {
        epoch: ck.epoch,
        param_hash: ck.param_hash(),
    };
    for &b in &opts.b_list {
        let scorer = Scorer::new(&ck.model, tag.clone(), ScoreBatchSpec::new(b, opts.seed))?;
        for &kind in &opts.kinds {
            let stats = if kind.needs_stats() {
                let st = scorer.fit(&data.id_fit, kind, opts.epsilon, opts.sigma_convention, opts.n_fit)?;
                out.stats
                    .push((format!("stats-e{:04}-b{b}-{kind}", ck.epoch), st.clone()));
                Some(st)
            } else {
                None
            };
            let id_table = scorer.score(id_eval, kind, stats.as_ref(), opts.keep_layer_scores)?;
            let id_scores = id_table.scores();
            out.scores.push(NamedScores {
                name: score_file_stem(&data.id_label, ck.epoch, b, kind),
                table: id_table,
            });
            for (label, batch) in oods {
                let table = scorer.score(batch, kind, stats.as_ref(), opts.keep_layer_scores)?;
                let key = PairKey {
                    id_dataset: data.id_label.clone(),
                    ood_dataset: label.clone(),
                    checkpoint_epoch: ck.epoch,
                    b,
                    kind,
                };
                out.reports
                    .push(evaluate_pair(key, &id_scores, &table.scores(), opts.bins)?);
                out.scores.push(NamedScores {
                    name: score_file_stem(label, ck.epoch, b, kind),
                    table,
                });
            }
        }
    }
    Ok(())
}
