use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sirus::TreeCount;

#[derive(Debug, Parser)]
#[command(name = "sirus", version, about = "Stable and interpretable rule sets for regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and print its rule table.
    Fit(FitArgs),
    /// Predict the rows of a CSV file with a saved model.
    Predict(PredictArgs),
    /// Tune p0 by cross-validation and write the Pareto points.
    Tune(TuneArgs),
    /// Cross-validated error, stability and size at one p0.
    Stability(StabilityArgs),
    /// Evaluate several datasets against the full-depth forest baseline.
    Benchmark(BenchmarkArgs),
}

/// Dataset and method settings shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    pub response: String,
    /// Columns to one-hot encode (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[command(flatten)]
    pub method: MethodArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Number of quantile bins per feature.
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    /// Path frequency threshold; tuned by cross-validation when absent.
    #[arg(long)]
    pub p0: Option<f64>,
    /// Number of trees, or `adaptive`.
    #[arg(long, default_value = "adaptive", value_parser = parse_trees)]
    pub trees: TreeCount,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Cross-validation repetitions.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Where to write the model JSON.
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Where to write the rule table (stdout when absent).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Where to write the Pareto CSV when p0 is tuned.
    #[arg(long)]
    pub pareto: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV with the training feature columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Pareto CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Results CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Dataset files, evaluated in order.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Response column of each dataset; a single value applies to all.
    #[arg(long, required = true)]
    pub response: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Results CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_trees(s: &str) -> Result<TreeCount, String> {
    if s.eq_ignore_ascii_case("adaptive") {
        return Ok(TreeCount::Adaptive);
    }
    match s.parse::<usize>() {
        Ok(m) if m > 0 => Ok(TreeCount::Fixed(m)),
        _ => Err(format!("expected a positive integer or `adaptive`, got `{s}`")),
    }
}
