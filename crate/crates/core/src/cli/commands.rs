use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use super::config::{source_label, ExperimentConfig};
use super::{ConfigArgs, EvalArgs, ExportArgs, HistArgs, NpdemoArgs, SampleArgs, ScoreArgs, SweepArgs, TrainArgs};
use crate::datasets::{encode_idx, export_raw, sample_eval_set, ImageBatch, Split};
use crate::error::Error;
use crate::evaluation::{
    checkpoint_path, evaluate_pair, figure_name, histogram_svg, np_lemma_demo, score_file_stem, sweep_report,
    DiscreteDistributionPair, EvalPairReport, PairKey, SweepData, SweepOptions,
};
use crate::flow::{write_pgm_grid, FlowModel};
use crate::fsutil::write_atomic;
use crate::numerics::{derive_stream, Precision, Real, SeededRng};
use crate::scoring::{GaussianLayerStats, ModelTag, ScoreBatchSpec, ScoreKind, ScoreTable, Scorer, SigmaConvention};
use crate::training::{load_checkpoint, read_checkpoint_header, save_checkpoint, Trainer};

const INIT_TAG: u64 = 0x494e_4954;
const SAMPLE_TAG: u64 = 0x534d_504c;

pub const LOSS_CSV_HEADER: &str = "epoch;mean_bpd;batches;clipped_batches";

/// `key=value` with a TOML value; anything that does not parse is a string.
fn parse_set(entry: &str) -> Result<(String, toml::Value)> {
    let (k, v) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{entry}`")))?;
    let (k, v) = (k.trim(), v.trim());
    let value = format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

pub(super) fn resolve(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut o = toml::Table::new();
    if let Some(p) = &a.preset {
        o.insert("preset".into(), p.clone().into());
    }
    if let Some(d) = &a.data {
        o.insert("id_data".into(), d.clone().into());
    }
    if let Some(e) = a.epochs {
        o.insert("epochs".into(), (e as i64).into());
    }
    if let Some(s) = a.seed {
        o.insert("seed".into(), (s as i64).into());
    }
    if let Some(p) = &a.precision {
        o.insert("precision".into(), p.clone().into());
    }
    for entry in &a.set {
        let (k, v) = parse_set(entry)?;
        o.insert(k, v);
    }
    let cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path, &o)?,
        None => ExperimentConfig::resolve(None, &o)?,
    };
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    // everything that can fail on bad input happens before the first write
    let data = cfg.load_split(&cfg.id_data, Split::Train)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &data, &a.out),
        Precision::F64 => train_typed::<f64>(&cfg, &data, &a.out),
    }
}

fn train_typed<T: Real>(cfg: &ExperimentConfig, data: &ImageBatch, out: &Path) -> Result<()> {
    let model = FlowModel::<T>::build(
        cfg.flow_config()?,
        &mut SeededRng::new(cfg.seed, derive_stream(INIT_TAG, 0, 0)),
    )?;
    let mut trainer = Trainer::new(model, cfg.train_config()?)?;
    trainer.set_data_source(cfg.id_data.clone());
    write_atomic(&out.join("resolved-config"), cfg.to_toml().as_bytes())?;
    let mut loss = format!("{LOSS_CSV_HEADER}\n");
    eprintln!(
        "training {} ({} params, {}) on {} images of {}",
        cfg.preset,
        trainer.model().num_params(),
        cfg.precision.as_str(),
        data.len(),
        cfg.id_data
    );
    trainer.run(data, |t, r| {
        writeln!(
            loss,
            "{};{:.6};{};{}",
            r.epoch, r.mean_bpd, r.batches, r.clipped_batches
        )
        .expect("string write");
        write_atomic(&out.join("loss.csv"), loss.as_bytes())?;
        let mut line = format!("epoch {:>4}  bpd {:.4}", r.epoch, r.mean_bpd);
        if r.clipped_batches > 0 {
            write!(line, "  clipped {}/{}", r.clipped_batches, r.batches).expect("string write");
        }
        if t.is_checkpoint_epoch() {
            let path = checkpoint_path(out, t.epoch());
            save_checkpoint(&t.checkpoint(), &path)?;
            write!(line, "  -> {}", path.display()).expect("string write");
        }
        eprintln!("{line}");
        Ok(())
    })?;
    Ok(())
}

fn sigma(s: &Option<String>, default: SigmaConvention) -> Result<SigmaConvention> {
    Ok(match s {
        Some(s) => SigmaConvention::from_str(s)?,
        None => default,
    })
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    let header = read_checkpoint_header(&a.checkpoint)?;
    match header.precision {
        Precision::F32 => score_typed::<f32>(&cfg, a),
        Precision::F64 => score_typed::<f64>(&cfg, a),
    }
}

fn score_typed<T: Real>(cfg: &ExperimentConfig, a: &ScoreArgs) -> Result<()> {
    let kind = ScoreKind::from_str(&a.kind)?;
    let convention = sigma(&a.sigma_convention, cfg.sigma_convention)?;
    let fit_src = a.fit_data.clone().unwrap_or_else(|| cfg.id_data.clone());
    let test_src = a.test_data.clone().unwrap_or_else(|| cfg.id_data.clone());
    let eval = sample_eval_set(&cfg.load_split(&test_src, Split::Test)?, cfg.n_eval, cfg.score_seed)?;
    let stats_in = match &a.stats {
        Some(p) => Some(GaussianLayerStats::from_json(&read_text(p)?)?),
        None => None,
    };

    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let tag = ModelTag {
        epoch: ck.epoch,
        param_hash: ck.param_hash(),
    };
    let scorer = Scorer::new(&ck.model, tag, ScoreBatchSpec::new(a.b, cfg.score_seed))?;
    let stats = match (kind.needs_stats(), stats_in) {
        (false, _) => None,
        (true, Some(s)) => Some(s),
        (true, None) => {
            let fit = if a.fit_equals_test || cfg.fit_equals_test {
                sample_eval_set(&cfg.load_split(&fit_src, Split::Test)?, cfg.n_eval, cfg.score_seed)?
            } else {
                cfg.load_split(&fit_src, Split::Fit)?
            };
            let s = scorer.fit(&fit, kind, cfg.epsilon, convention, cfg.fit_cap())?;
            let path = a
                .out
                .join(format!("scores/stats-e{:04}-b{}-{kind}.json", ck.epoch, a.b));
            write_atomic(&path, s.to_json().as_bytes())?;
            eprintln!(
                "fitted {} layers on {} groups of {fit_src} -> {}",
                s.mu.len(),
                s.n_fit,
                path.display()
            );
            Some(s)
        }
    };
    let table = scorer.score(&eval, kind, stats.as_ref(), a.layer_scores)?;
    let path = a.out.join(format!(
        "scores/{}.csv",
        score_file_stem(&source_label(&test_src)?, ck.epoch, a.b, kind)
    ));
    write_atomic(&path, table.to_csv().as_bytes())?;
    if table.dropped > 0 {
        eprintln!("b={} drops {} of {} samples", a.b, table.dropped, eval.len());
    }
    println!("{} rows -> {}", table.rows.len(), path.display());
    Ok(())
}

fn parse_kinds(kinds: &[String]) -> Result<Vec<ScoreKind>> {
    kinds
        .iter()
        .map(|k| ScoreKind::from_str(k).map_err(Into::into))
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.run.join("resolved-config"), &toml::Table::new())
        .with_context(|| format!("reading the config of run {}", a.run.display()))?;
    let oods = if a.ood.is_empty() {
        cfg.ood_data.clone()
    } else {
        a.ood.clone()
    };
    let fit_equals_test = a.fit_equals_test || cfg.fit_equals_test;
    let opts = SweepOptions {
        epochs: if a.epochs.is_empty() {
            cfg.train_config()?.checkpoint_epochs
        } else {
            a.epochs.clone()
        },
        b_list: if a.b.is_empty() { cfg.b.clone() } else { a.b.clone() },
        kinds: if a.kinds.is_empty() {
            cfg.kinds.clone()
        } else {
            parse_kinds(&a.kinds)?
        },
        n_eval: cfg.n_eval,
        n_fit: cfg.fit_cap(),
        epsilon: cfg.epsilon,
        sigma_convention: sigma(&a.sigma_convention, cfg.sigma_convention)?,
        bins: cfg.bins,
        seed: cfg.score_seed,
        keep_layer_scores: false,
    };
    let id_test = cfg.load_split(&cfg.id_data, Split::Test)?;
    let id_fit = if fit_equals_test {
        sample_eval_set(&id_test, cfg.n_eval, cfg.score_seed)?
    } else {
        cfg.load_split(&cfg.id_data, Split::Fit)?
    };
    let data = SweepData {
        id_label: source_label(&cfg.id_data)?,
        id_fit,
        id_test,
        oods: oods
            .iter()
            .map(|s| Ok((source_label(s)?, cfg.load_split(s, Split::Test)?)))
            .collect::<Result<Vec<_>>>()?,
    };
    let outcome = sweep_report(&a.run, &data, &opts)?;
    outcome.write(a.out.as_deref().unwrap_or(&a.run))?;
    print!("{}", outcome.table.to_csv());
    for n in &outcome.notes {
        eprintln!("note: {n}");
    }
    if !outcome.missing_epochs.is_empty() {
        bail!(Error::InsufficientData(format!(
            "no checkpoint for epochs {:?}; they were skipped",
            outcome.missing_epochs
        )));
    }
    Ok(())
}

fn load_scores(path: &Path) -> Result<(String, ScoreTable)> {
    let table = ScoreTable::from_csv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if table.rows.is_empty() {
        bail!(Error::InsufficientData(format!("{} holds no scores", path.display())));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((label, table))
}

fn pair_from_files(id: &Path, ood: &Path, bins: usize) -> Result<EvalPairReport> {
    let (id_label, id_t) = load_scores(id)?;
    let (ood_label, ood_t) = load_scores(ood)?;
    let first = &id_t.rows[0];
    // score files are named `<dataset>-eNNNN-bB-<kind>`; report the dataset
    let suffix = score_file_stem("", first.checkpoint_epoch, first.b, first.kind);
    let dataset = |s: String| {
        s.strip_suffix(suffix.as_str())
            .filter(|d| !d.is_empty())
            .map(str::to_string)
            .unwrap_or(s)
    };
    let key = PairKey {
        id_dataset: dataset(id_label),
        ood_dataset: dataset(ood_label),
        checkpoint_epoch: first.checkpoint_epoch,
        b: first.b,
        kind: first.kind,
    };
    let (s_id, s_ood) = (id_t.scores(), ood_t.scores());
    let all = s_id.iter().chain(&s_ood);
    if all.clone().all(|&v| v == s_id[0]) {
        eprintln!(
            "warning: every score equals {}; AUROC is 0.5 and OVL is 1 by convention",
            s_id[0]
        );
    }
    Ok(evaluate_pair(key, &s_id, &s_ood, bins)?)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let r = pair_from_files(&a.id_scores, &a.ood_scores, a.bins)?;
    let json = serde_json::to_string_pretty(&r).expect("report serializes") + "\n";
    let name = figure_name(&r);
    write_atomic(&a.out.join(format!("reports/{name}.json")), json.as_bytes())?;
    write_atomic(&a.out.join(format!("figures/{name}.svg")), histogram_svg(&r).as_bytes())?;
    println!(
        "auroc={:.6} ovl={:.6} n_id={} n_ood={}",
        r.auroc, r.ovl, r.n_id, r.n_ood
    );
    Ok(())
}

pub fn cmd_hist(a: &HistArgs) -> Result<()> {
    let r = pair_from_files(&a.id_scores, &a.ood_scores, a.bins)?;
    write_atomic(&a.out, histogram_svg(&r).as_bytes())?;
    println!("{}", a.out.display());
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    match read_checkpoint_header(&a.checkpoint)?.precision {
        Precision::F32 => sample_typed::<f32>(a),
        Precision::F64 => sample_typed::<f64>(a),
    }
}

fn sample_typed<T: Real>(a: &SampleArgs) -> Result<()> {
    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let mut rng = SeededRng::new(a.seed, derive_stream(SAMPLE_TAG, 0, 0));
    let x = ck.model.sample(a.n, a.temperature, &mut rng)?;
    write_pgm_grid(&x, a.cols, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn one_column(path: &Path) -> Result<Vec<f64>> {
    read_text(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Domain(format!("{}: '{s}' is not a number", path.display())).into())
        })
        .collect()
}

pub fn cmd_npdemo(a: &NpdemoArgs) -> Result<()> {
    let pair = match (&a.pq, &a.p, &a.q) {
        (Some(pq), _, _) => DiscreteDistributionPair::from_columns(&read_text(pq)?)?,
        (None, Some(p), Some(q)) => DiscreteDistributionPair::new(one_column(p)?, one_column(q)?)?,
        _ => bail!(Error::Config("give either --pq or both --p and --q".into())),
    };
    if !pair.has_overlap() {
        eprintln!("warning: P and Q have disjoint supports; both statistics separate them perfectly");
    }
    let r = np_lemma_demo(&pair);
    println!("auc_true={:.6} auc_ratio={:.6} C={:.6}", r.auc_true, r.auc_ratio, r.c);
    let verdict = if r.auc_ratio > r.auc_true {
        "the likelihood ratio separates better"
    } else {
        "the two statistics tie"
    };
    println!("{verdict}");
    Ok(())
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    let split = match a.split.as_str() {
        "full" => Split::Full,
        "train" => Split::Train,
        "fit" => Split::Fit,
        "test" => Split::Test,
        s => bail!(Error::Config(format!(
            "unknown split `{s}` (full | train | fit | test)"
        ))),
    };
    let batch = cfg.load_split(&cfg.id_data, split)?;
    match a.format.as_str() {
        "idx" => write_atomic(&a.out, &encode_idx(&batch)?)?,
        "raw" => export_raw(&batch, &a.out)?,
        f => bail!(Error::Config(format!("unknown format `{f}` (idx | raw)"))),
    }
    println!("{} images -> {}", batch.len(), a.out.display());
    Ok(())
}
