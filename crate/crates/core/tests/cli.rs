use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gradflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Small run whose test split holds 1200 images.
fn small_run(dir: &Path, epochs: &str) -> Output {
    gradflow(
        dir,
        &[
            "train",
            "--preset",
            "glow-desk",
            "--data",
            "synthetic:flat-blob",
            "--epochs",
            epochs,
            "--seed",
            "7",
            "--set",
            "n_synthetic=2400",
            "--set",
            "split_train=0.1",
            "--set",
            "split_fit=0.4",
            "--set",
            "split_test=0.5",
            "--out",
            "run",
        ],
    )
}

#[test]
fn train_writes_listed_checkpoints_and_repeats_byte_identically() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = small_run(d.path(), "5");
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = files_under(&a.path().join("run"));
    let names: Vec<String> = files.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        [
            "checkpoints/epoch-0001.gfck",
            "checkpoints/epoch-0005.gfck",
            "loss.csv",
            "resolved-config"
        ]
    );
    for f in &files {
        assert_eq!(
            fs::read(a.path().join("run").join(f)).unwrap(),
            fs::read(b.path().join("run").join(f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
    let loss = fs::read_to_string(a.path().join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 6);
    assert!(loss.starts_with("epoch;mean_bpd;batches;clipped_batches\n1;"));
}

#[test]
fn missing_data_path_exits_2_without_writing() {
    let d = TempDir::new().unwrap();
    let o = gradflow(d.path(), &["train", "--data", "idx:does-not-exist.idx", "--out", "run"]);
    assert_eq!(code(&o), 2);
    assert!(!d.path().join("run").exists());
}

#[test]
fn usage_and_numeric_errors_have_distinct_codes() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&gradflow(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&gradflow(d.path(), &["train", "--set", "epoch=3"])), 2);
    let o = gradflow(
        d.path(),
        &[
            "train",
            "--epochs",
            "2",
            "--set",
            "n_synthetic=200",
            "--set",
            "learning_rate=1e6",
            "--out",
            "nan",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn score_eval_and_consistency_guard() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    assert_eq!(code(&small_run(p, "2")), 0);
    let score = |extra: &[&str]| {
        let mut args = vec!["score", "--config", "run/resolved-config", "--out", "run"];
        args.extend_from_slice(extra);
        gradflow(p, &args)
    };

    let o = score(&["--checkpoint", "run/checkpoints/epoch-0002.gfck", "--b", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("run/scores/flat-blob-e0002-b5-gradient-aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201, "1000 samples in groups of 5");
    assert!(p.join("run/scores/stats-e0002-b5-gradient-aggregate.json").exists());

    let o = score(&[
        "--checkpoint",
        "run/checkpoints/epoch-0001.gfck",
        "--b",
        "5",
        "--stats",
        "run/scores/stats-e0002-b5-gradient-aggregate.json",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("consistency"));

    let o = score(&[
        "--checkpoint",
        "run/checkpoints/epoch-0002.gfck",
        "--kind",
        "nll-baseline",
        "--test-data",
        "synthetic:white-noise",
    ]);
    assert_eq!(code(&o), 0);
    let bpd = fs::read_to_string(p.join("run/scores/white-noise-e0002-b1-negative-bpd-baseline.csv")).unwrap();
    let row = bpd.lines().nth(1).unwrap();
    assert!(row.contains(";negative-bpd-baseline;1;"));
    let v: f64 = row.split(';').nth(4).unwrap().parse().unwrap();
    // noise costs more than the 8 bits a uniform model would spend on it
    assert!(v.is_finite() && v > 8.0, "bits per dimension {v}");

    let o = score(&[
        "--checkpoint",
        "run/checkpoints/epoch-0002.gfck",
        "--b",
        "5",
        "--test-data",
        "synthetic:white-noise",
    ]);
    assert_eq!(code(&o), 0);
    let o = gradflow(
        p,
        &[
            "eval",
            "--id-scores",
            "run/scores/flat-blob-e0002-b5-gradient-aggregate.csv",
            "--ood-scores",
            "run/scores/white-noise-e0002-b5-gradient-aggregate.csv",
            "--out",
            "run",
        ],
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("auroc="));
    assert!(p
        .join("run/figures/hist-flat-blob-vs-white-noise-e0002-b5-gradient-aggregate.svg")
        .exists());
}

#[test]
fn sweep_counts_rows_and_flags_missing_checkpoints() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    let o = gradflow(
        p,
        &[
            "train",
            "--epochs",
            "2",
            "--set",
            "n_synthetic=400",
            "--set",
            "n_eval=60",
            "--set",
            "checkpoint_epochs=[1, 2]",
            "--out",
            "run",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = gradflow(
        p,
        &[
            "sweep",
            "--run",
            "run",
            "--ood",
            "synthetic:white-noise",
            "--ood",
            "synthetic:correlated-field",
            "--b",
            "1,5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("run/reports/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9, "2 checkpoints x 2 OOD sets x 2 group sizes");
    assert_eq!(stdout(&o), csv);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("run/reports/sweep.json")).unwrap()).unwrap();
    assert_eq!(json["version"], 1);
    assert_eq!(fs::read_dir(p.join("run/figures")).unwrap().count(), 8);

    let o = gradflow(
        p,
        &[
            "sweep", "--run", "run", "--epochs", "1,3", "--b", "1", "--out", "partial",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[3]"));
    assert_eq!(
        fs::read_to_string(p.join("partial/reports/sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn npdemo_and_sample() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    fs::write(p.join("p.txt"), "0.4\n0.35\n0.25\n").unwrap();
    fs::write(p.join("q.txt"), "0.5\n0.1\n0.4\n").unwrap();
    let o = gradflow(p, &["npdemo", "--p", "p.txt", "--q", "q.txt"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let field = |name: &str| -> f64 {
        out.split_whitespace()
            .find_map(|t| t.strip_prefix(&format!("{name}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(field("auc_ratio") > field("auc_true"));

    fs::write(p.join("disjoint.txt"), "1 0\n0 1\n").unwrap();
    let o = gradflow(p, &["npdemo", "--pq", "disjoint.txt"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    fs::write(p.join("bad.txt"), "0.7 0.5\n0.7 0.5\n").unwrap();
    assert_eq!(code(&gradflow(p, &["npdemo", "--pq", "bad.txt"])), 2);

    assert_eq!(
        code(&gradflow(
            p,
            &["train", "--epochs", "1", "--set", "n_synthetic=100", "--out", "run"]
        )),
        0
    );
    let o = gradflow(
        p,
        &[
            "sample",
            "--checkpoint",
            "run/checkpoints/epoch-0001.gfck",
            "--n",
            "16",
            "--temperature",
            "1.0",
            "--out",
            "grid.pgm",
        ],
    );
    assert_eq!(code(&o), 0);
    let pgm = fs::read(p.join("grid.pgm")).unwrap();
    // 4x4 grid of 8x8 images with one-pixel gutters
    let header = b"P5\n37 37\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 37 * 37);
}
