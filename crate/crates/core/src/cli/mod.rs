//! The `gradflow` command line.
//!
//! Exit codes: 0 success, 2 usage, configuration or data error, 3 numeric
//! failure. `GRADFLOW_THREADS` caps the worker pool.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_export, cmd_hist, cmd_npdemo, cmd_sample, cmd_score, cmd_sweep, cmd_train};
pub use config::{source_label, ExperimentConfig};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "gradflow",
    version,
    about = "Layer-wise gradient OOD scoring with partially trained flows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a flow and write checkpoints, `loss.csv` and `resolved-config`.
    Train(TrainArgs),
    /// Fit layer statistics on one checkpoint and score a dataset.
    Score(ScoreArgs),
    /// AUROC, OVL and a histogram for two score files.
    Eval(EvalArgs),
    /// Evaluate many checkpoints of a run against its OOD sets.
    Sweep(SweepArgs),
    /// Overlaid histogram SVG of two score files.
    Hist(HistArgs),
    /// Draw images from a checkpoint as one PGM grid.
    Sample(SampleArgs),
    /// Likelihood vs likelihood-ratio AUC on a discrete pair.
    Npdemo(NpdemoArgs),
    /// Write one split of a data source as IDX or raw bytes.
    ExportData(ExportArgs),
}

/// Settings shared by every command that reads an experiment config.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// `synthetic:<family>` or `idx:<path>` for the in-distribution data.
    #[arg(long = "data")]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<String>,
    /// Extra `key=value` config entries, value in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source whose fit split provides the layer statistics (default: the ID data).
    #[arg(long)]
    pub fit_data: Option<String>,
    /// Source whose test split is scored (default: the ID data).
    #[arg(long)]
    pub test_data: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub b: usize,
    /// gradient | nll-baseline | diagonal
    #[arg(long, default_value = "gradient")]
    pub kind: String,
    /// Reuse a statistics file instead of fitting.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Fit on the evaluation split of the fit source.
    #[arg(long)]
    pub fit_equals_test: bool,
    /// variance | square-fitted
    #[arg(long)]
    pub sigma_convention: Option<String>,
    /// Keep per-layer scores in the CSV.
    #[arg(long)]
    pub layer_scores: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub id_scores: PathBuf,
    #[arg(long)]
    pub ood_scores: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// OOD sources (default: `ood_data` of the run config).
    #[arg(long = "ood")]
    pub ood: Vec<String>,
    /// Comma-separated epochs (default: the sweep epochs of the run).
    #[arg(long, value_delimiter = ',')]
    pub epochs: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub b: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<String>,
    #[arg(long)]
    pub fit_equals_test: bool,
    #[arg(long)]
    pub sigma_convention: Option<String>,
    /// Output directory (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub id_scores: PathBuf,
    #[arg(long)]
    pub ood_scores: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NpdemoArgs {
    /// Two-column text: P and Q per support point.
    #[arg(long, conflicts_with_all = ["p", "q"])]
    pub pq: Option<PathBuf>,
    /// One probability per line.
    #[arg(long, requires = "q")]
    pub p: Option<PathBuf>,
    #[arg(long, requires = "p")]
    pub q: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// full | train | fit | test
    #[arg(long, default_value = "full")]
    pub split: String,
    /// idx | raw
    #[arg(long, default_value = "idx")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error chain: 3 if any cause is a numeric failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Numeric { .. })));
    if numeric {
        3
    } else {
        2
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GRADFLOW_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("GRADFLOW_THREADS must be a positive integer, got `{v}`")))?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Hist(a) => cmd_hist(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Npdemo(a) => cmd_npdemo(&a),
        Command::ExportData(a) => cmd_export(&a),
    }
}

/// Parses `args` (program name first), runs the command and maps errors to
/// exit codes.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
