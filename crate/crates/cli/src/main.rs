//! `maha`: fit Gaussian feature models, score batches, evaluate detectors,
//! train ensembles and probes, and generate synthetic feature sets.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 data or I/O
//! error, 4 numerical failure.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "maha",
    version,
    about = "Mahalanobis confidence scores for feature-space anomaly detection"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a conditional or marginal Gaussian to every layer of a feature set.
    Fit(FitArgs),
    /// Score a feature set with a fitted model and write a score CSV.
    Score(ScoreArgs),
    /// Detection metrics for in-distribution vs out-of-distribution scores.
    Eval(EvalArgs),
    /// Train the logistic-regression ensemble over score columns.
    Ensemble(EnsembleArgs),
    /// Pick the best `eps{e}_T{t}` grid point on validation data.
    Select(SelectArgs),
    /// Train a classifier on a subset of principal components.
    Probe(ProbeArgs),
    /// Generate a synthetic feature set and, optionally, anomalies.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Conditional,
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreKind {
    Conditional,
    Marginal,
    Partial,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Auroc,
    TnrAtTpr95,
}

#[derive(Args)]
pub struct FitArgs {
    /// Feature-set directory.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Eigenvalue floor relative to max(lambda_1, 1).
    #[arg(long, default_value_t = maha_core::estimator::DEFAULT_FLOOR_SCALE)]
    pub floor_scale: f64,
    /// Only fit these layers (repeatable); default all.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub score: ScoreKind,
    /// 1-based inclusive ranges, e.g. `10-512` or `1-3,7`; required for partial.
    #[arg(long)]
    pub components: Option<String>,
    /// Only score these layers (repeatable); default every model layer.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub in_scores: PathBuf,
    #[arg(long)]
    pub out_scores: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Training samples taken from each side.
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    /// Validation samples taken from each side.
    #[arg(long, default_value_t = 1000)]
    pub n_val: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EnsembleArgs {
    /// In-distribution score CSVs; every column becomes one feature.
    #[arg(long, num_args = 1.., required = true)]
    pub in_scores: Vec<PathBuf>,
    /// Out-of-distribution score CSVs with the same columns.
    #[arg(long, num_args = 1.., required = true)]
    pub out_scores: Vec<PathBuf>,
    /// Single-column ODIN score CSV for the in-distribution samples.
    #[arg(long, requires = "odin_out")]
    pub odin_in: Option<PathBuf>,
    #[arg(long, requires = "odin_in")]
    pub odin_out: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct SelectArgs {
    /// Directory of `eps{e}` or `eps{e}_T{t}` subdirectories, each holding
    /// `in.csv` and `out.csv`.
    #[arg(long)]
    pub grid: PathBuf,
    /// `layer/score_name` column to use when the CSVs hold several.
    #[arg(long)]
    pub score: Option<String>,
    #[arg(long, value_enum, default_value_t = Metric::Auroc)]
    pub metric: Metric,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct ProbeArgs {
    /// Labelled training features.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// 1-based inclusive ranges, e.g. `1-9`.
    #[arg(long)]
    pub components: String,
    /// Labelled held-out features for the reported accuracy.
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    /// Layer to probe; defaults to the model's only layer.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long)]
    pub model_out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for the in-distribution set.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "dim")]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_per_class: usize,
    #[arg(long)]
    pub head_k: usize,
    /// Comma-separated, descending, one per head component.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub head_variances: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub tail_variance: f64,
    #[arg(long, default_value_t = 20.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample stream seed; defaults to --seed. Vary it for held-out sets
    /// from the same hidden basis.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Also write anomalies to this directory.
    #[arg(long)]
    pub anomalies_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    pub tail_inflation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub head_inflation: f64,
    /// Anomaly count; defaults to classes * n_per_class.
    #[arg(long)]
    pub n_anomalies: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub anomaly_seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Score(a) => commands::score(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ensemble(a) => commands::ensemble(&a),
        Command::Select(a) => commands::select(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
