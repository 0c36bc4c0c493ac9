//! End-to-end scoring runs on a small flat-blob model trained for 3 epochs.

use std::sync::OnceLock;

use gradflow::cli::ExperimentConfig;
use gradflow::datasets::{sample_eval_set, ImageBatch, Split};
use gradflow::evaluation::auroc;
use gradflow::flow::FlowModel;
use gradflow::numerics::SeededRng;
use gradflow::scoring::{
    classify, quantile, Label, ModelTag, ScoreBatchSpec, ScoreKind, Scorer, SigmaConvention, Threshold, DEFAULT_EPSILON,
};
use gradflow::training::{encode_checkpoint, train, Checkpoint};

struct Fixture {
    cfg: ExperimentConfig,
    checkpoint: Checkpoint<f32>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = ExperimentConfig::preset("glow-desk").unwrap();
        cfg.n_synthetic = 4000;
        cfg.split_train = 0.25;
        cfg.split_fit = 0.25;
        cfg.split_test = 0.5;
        cfg.epochs = 3;
        cfg.checkpoint_epochs = vec![3];
        let data = cfg.load_split(&cfg.id_data, Split::Train).unwrap();
        let model = FlowModel::<f32>::build(cfg.flow_config().unwrap(), &mut SeededRng::new(cfg.seed, 1)).unwrap();
        let checkpoint = train(model, &data, cfg.train_config().unwrap()).unwrap().pop().unwrap();
        Fixture { cfg, checkpoint }
    })
}

fn tag(c: &Checkpoint<f32>) -> ModelTag {
    ModelTag {
        epoch: c.epoch,
        param_hash: c.param_hash(),
    }
}

fn eval_set(source: &str) -> ImageBatch {
    let f = fixture();
    let test = f.cfg.load_split(source, Split::Test).unwrap();
    sample_eval_set(&test, 1000, 0).unwrap()
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v / rows.len() as f64;
        }
    }
    m
}

#[test]
fn white_noise_raises_most_layer_scores() {
    let f = fixture();
    let scorer = Scorer::new(&f.checkpoint.model, tag(&f.checkpoint), ScoreBatchSpec::new(1, 0)).unwrap();
    let layer_means = |data: &ImageBatch| {
        let (v, _) = scorer.layer_vectors(data, None).unwrap();
        mean_columns(&v.into_iter().map(|v| v.values).collect::<Vec<_>>())
    };
    let id = layer_means(&eval_set("synthetic:flat-blob"));
    let ood = layer_means(&eval_set("synthetic:white-noise"));
    let higher = id.iter().zip(&ood).filter(|(i, o)| o > i).count();
    assert!(
        higher as f64 >= 0.9 * id.len() as f64,
        "OOD mean above ID mean on {higher} of {} layers",
        id.len()
    );
}

#[test]
fn baseline_separates_noise_from_a_simple_training_set() {
    let f = fixture();
    let scorer = Scorer::new(&f.checkpoint.model, tag(&f.checkpoint), ScoreBatchSpec::new(1, 0)).unwrap();
    let score = |d: &ImageBatch| {
        scorer
            .score(d, ScoreKind::NegativeBpdBaseline, None, false)
            .unwrap()
            .scores()
    };
    let a = auroc(
        &score(&eval_set("synthetic:flat-blob")),
        &score(&eval_set("synthetic:white-noise")),
    )
    .unwrap();
    assert!(a > 0.9, "baseline AUROC {a}");
}

#[test]
fn id_quantile_threshold_controls_false_positives() {
    let f = fixture();
    let scorer = Scorer::new(&f.checkpoint.model, tag(&f.checkpoint), ScoreBatchSpec::new(1, 0)).unwrap();
    let fit = f.cfg.load_split("synthetic:flat-blob", Split::Fit).unwrap();
    let kind = ScoreKind::GradientAggregate;
    let stats = scorer
        .fit(&fit, kind, DEFAULT_EPSILON, SigmaConvention::Variance, usize::MAX)
        .unwrap();
    let fit_scores = scorer.score(&fit, kind, Some(&stats), false).unwrap().scores();
    let threshold = Threshold::id_quantile(&fit_scores, 0.95).unwrap();
    assert_eq!(threshold.value, quantile(&fit_scores, 0.95).unwrap());
    let held_out = scorer
        .score(&eval_set("synthetic:flat-blob"), kind, Some(&stats), false)
        .unwrap()
        .scores();
    let fpr = held_out
        .iter()
        .filter(|&&s| classify(s, &threshold) == Label::Ood)
        .count() as f64
        / held_out.len() as f64;
    assert!((fpr - 0.05).abs() <= 0.02, "false-positive rate {fpr}");
}

#[test]
fn diagonal_fisher_variant_tracks_the_identity_variant() {
    let f = fixture();
    let scorer = Scorer::new(&f.checkpoint.model, tag(&f.checkpoint), ScoreBatchSpec::new(1, 0)).unwrap();
    let fit = f.cfg.load_split("synthetic:flat-blob", Split::Fit).unwrap();
    let (id, ood) = (eval_set("synthetic:flat-blob"), eval_set("synthetic:correlated-field"));
    let auc = |kind| {
        let stats = scorer
            .fit(&fit, kind, DEFAULT_EPSILON, SigmaConvention::Variance, usize::MAX)
            .unwrap();
        let s = |d| scorer.score(d, kind, Some(&stats), false).unwrap().scores();
        auroc(&s(&id), &s(&ood)).unwrap()
    };
    let (identity, diagonal) = (
        auc(ScoreKind::GradientAggregate),
        auc(ScoreKind::DiagonalPreconditioned),
    );
    assert!(
        (identity - diagonal).abs() <= 0.05,
        "identity {identity} diagonal {diagonal}"
    );
}

#[test]
fn scoring_is_read_only_and_reports_dropped_samples() {
    let f = fixture();
    let before = encode_checkpoint(&f.checkpoint).unwrap();
    let test = f.cfg.load_split("synthetic:flat-blob", Split::Test).unwrap();
    let data = sample_eval_set(&test, 1003, 0).unwrap();
    let scorer = Scorer::new(&f.checkpoint.model, tag(&f.checkpoint), ScoreBatchSpec::new(5, 0)).unwrap();
    let kind = ScoreKind::GradientAggregate;
    let stats = scorer
        .fit(&data, kind, DEFAULT_EPSILON, SigmaConvention::Variance, usize::MAX)
        .unwrap();
    let table = scorer.score(&data, kind, Some(&stats), false).unwrap();
    assert_eq!((table.rows.len(), table.dropped), (200, 3));
    let again = scorer.score(&data, kind, Some(&stats), false).unwrap();
    assert_eq!(table.to_csv(), again.to_csv());
    assert_eq!(encode_checkpoint(&f.checkpoint).unwrap(), before);
}
