use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spotscape::pipeline::TrainMode;

/// Self-supervised spot embeddings for spatial transcriptomics.
#[derive(Debug, Parser)]
#[command(name = "spotscape", version, about)]
pub struct Cli {
    /// Seed for every random stream; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the learning-rate search.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate layered synthetic slices with ground-truth domains.
    Synth(SynthArgs),
    /// Select variable genes and normalize slices.
    Preprocess(PreprocessArgs),
    /// Train a model and export embeddings, clusters and metrics.
    Train(TrainArgs),
    /// Cluster embeddings and score them against labels.
    Evaluate(EvaluateArgs),
    /// Transfer labels from reference to query embeddings.
    Align(AlignArgs),
    /// Reconstruct expression from a trained checkpoint.
    Impute(ImputeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Multi,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Single => TrainMode::Single,
            ModeArg::Multi => TrainMode::Multi,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 900)]
    pub spots: usize,
    #[arg(long, default_value_t = 200)]
    pub genes: usize,
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    #[arg(long, default_value_t = 1)]
    pub slices: usize,
    /// Standard deviation of the per-gene log batch factor.
    #[arg(long, default_value_t = 0.0)]
    pub batch_shift: f64,
    #[arg(long, default_value_t = 10)]
    pub markers: usize,
    #[arg(long, default_value_t = 2.0)]
    pub marker_fold: f64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Slice directories.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Config providing `hvg_n` and `target_sum`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Slice directories; taken from the config's `inputs` when omitted.
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pick the learning rate by silhouette over the default grid.
    #[arg(long)]
    pub lr_search: bool,
    /// Inputs are already normalized; skip preprocessing.
    #[arg(long)]
    pub preprocessed: bool,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Ground-truth labels (`label` column).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Slice of every spot (`slice` column); enables silhouette_batch.
    #[arg(long)]
    pub slices: Option<PathBuf>,
    /// Cluster count; defaults to the number of distinct labels.
    #[arg(long)]
    pub k: Option<usize>,
    /// Restrict label metrics to the selected ones.
    #[arg(long)]
    pub ari: bool,
    #[arg(long)]
    pub nmi: bool,
    #[arg(long)]
    pub ca: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub reference_labels: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    /// Query ground truth; enables LTARI.
    #[arg(long)]
    pub query_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// Slice directories; taken from the config's `inputs` when omitted.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub preprocessed: bool,
}
