//! Command-line pipeline: generate a synthetic corpus, cluster R-D curves,
//! train the cluster classifier, classify a corpus, estimate cluster weights,
//! solve the allocation, and evaluate rate/quality sweeps.
//!
//! Every command reads its inputs, computes all outputs in memory and then
//! writes them together under `--out-dir`; on failure nothing is left behind.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use output::Outputs;

#[derive(Debug, Parser)]
#[command(
    name = "rdalloc",
    version,
    about = "Cluster-based operating-point allocation for video corpora"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory receiving the command's output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus: rd_samples.csv, features.csv, labels.csv.
    Generate(GenerateArgs),
    /// Cluster R-D curves: cluster_model.json, cluster_labels.csv.
    Cluster(ClusterArgs),
    /// Train the cluster classifier: classifier_model.json, train_report.json.
    Train(TrainArgs),
    /// Predict clusters for a feature file: predictions.csv.
    Classify(ClassifyArgs),
    /// Estimate cluster weights: weights.json, cluster_histogram.csv.
    Weights(WeightsArgs),
    /// Solve the allocation for one pair of quality floors: allocation.json.
    Optimize(OptimizeArgs),
    /// Baseline, optimal and oracle sweeps: sweeps.csv, bdrate.json.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON generator configuration; the built-in ten-archetype corpus if absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of chunks for the built-in corpus.
    #[arg(long, default_value_t = 2000)]
    pub n_chunks: usize,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// R-D sample CSV (chunk_id,q,rate_kbps,quality_db).
    #[arg(long)]
    pub rd: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Also write k_sweep.csv with the error for k = 1..=N.
    #[arg(long)]
    pub sweep_max_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV (chunk_id,f0,f1,...).
    #[arg(long)]
    pub features: PathBuf,
    /// Label CSV (chunk_id,cluster).
    #[arg(long)]
    pub labels: PathBuf,
    /// Fraction of each class used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = rdalloc::classifier::DEFAULT_C_GRID)]
    pub c_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = rdalloc::classifier::DEFAULT_GAMMA_GRID)]
    pub gamma_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Classifier model JSON.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Prediction CSV (chunk_id,cluster).
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Cluster model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Weights JSON.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub min_avg_quality: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub min_worst_quality: f64,
    /// Enumerate every combination instead of the multiplier search.
    #[arg(long)]
    pub exhaustive: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cluster_model: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub rd: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    /// CRF ladder for the baseline; every grid point if absent.
    #[arg(long, value_delimiter = ',')]
    pub crf: Option<Vec<f64>>,
}
