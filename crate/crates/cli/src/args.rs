//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use pedilung::TaskId;

use crate::config::{keys_help, DATASET_KEYS, DSP_KEYS, EVAL_KEYS, MODEL_KEYS, SCALOGRAM_KEYS, TRAIN_KEYS};

#[derive(Debug, Parser)]
#[command(name = "pedilung", version, about = "Pediatric lung-sound classification pipeline")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step (default: `train.seed`, itself 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Scalogram cache root (default: $PEDILUNG_CACHE, then ./pedilung-cache).
    #[arg(long, global = true, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair audio with annotations under a corpus root and write a manifest.
    Ingest(IngestArgs),
    /// Generate synthetic WAV + annotation pairs.
    Synth(SynthArgs),
    /// Band-pass, resample and normalise one recording.
    Preprocess(PreprocessArgs),
    /// Compute and cache the scalogram of every segment in a manifest.
    Featurize(FeaturizeArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Train and score once per focusing parameter.
    Sweep(SweepArgs),
    /// Per-segment class probabilities.
    Predict(PredictArgs),
    /// Render a recording or cache entry as a PNG scalogram.
    Plot(PlotArgs),
    /// Write the pooled embedding of every segment as CSV.
    ExportEmbeddings(ExportArgs),
}

/// Config keys each subcommand reads, by subcommand name.
pub fn command_keys(name: &str) -> Vec<&'static [&'static str]> {
    const SEED: &[&str] = &["train.seed"];
    const TASK: &[&str] = &["train.task", "eval.task"];
    const EVAL_BATCH: &[&str] = &["train.eval_batch_size"];
    match name {
        "ingest" => vec![DATASET_KEYS, SEED],
        "synth" => vec![SEED],
        "preprocess" => vec![DSP_KEYS],
        "featurize" => vec![DATASET_KEYS, DSP_KEYS, SCALOGRAM_KEYS, &["model.input_height", "model.input_width"], TASK],
        "train" | "sweep" => vec![DATASET_KEYS, DSP_KEYS, SCALOGRAM_KEYS, MODEL_KEYS, TRAIN_KEYS, EVAL_KEYS],
        "evaluate" => vec![DATASET_KEYS, DSP_KEYS, SCALOGRAM_KEYS, TASK, &["eval.gamma"], EVAL_BATCH],
        "predict" | "export-embeddings" => vec![DATASET_KEYS, DSP_KEYS, SCALOGRAM_KEYS, EVAL_BATCH],
        "plot" => vec![DSP_KEYS, SCALOGRAM_KEYS],
        _ => Vec::new(),
    }
}

/// The clap command with every subcommand's config keys in its help footer.
pub fn command() -> clap::Command {
    let mut cmd = <Cli as clap::CommandFactory>::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let footer = keys_help(&command_keys(&name));
        cmd = cmd.mut_subcommand(&name, |c| c.after_help(footer));
    }
    cmd
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus directory (default: `dataset.root`).
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Manifest to write (default: `dataset.manifest`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also hold out this fraction, stratified by record label, into `--val-out`.
    #[arg(long, requires = "val_out")]
    pub val_ratio: Option<f64>,
    #[arg(long, requires = "val_ratio")]
    pub val_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated class names, cycled over the recordings.
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    /// Interpret classes as record-level labels.
    #[arg(long)]
    pub record: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output WAV (32-bit float).
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and feature selection shared by the feature-producing commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Classification task (1-1, 1-2, 2-1, 2-2).
    #[arg(long)]
    pub task: Option<TaskId>,
    /// Reduced network with 64x64 scalograms.
    #[arg(long)]
    pub toy: bool,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Manifest (default: `dataset.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory (default: the global cache root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (default: `dataset.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Validation manifest scored after every epoch.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Output directory for checkpoints, history and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test manifest (default: `dataset.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Task to score; a coarse task collapses a fine model's predictions.
    #[arg(long)]
    pub task: Option<TaskId>,
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Report file (default: stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    pub gammas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CSV file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// WAV recording or `.scg` cache entry.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Window start in seconds (recordings only).
    #[arg(long)]
    pub start: Option<f64>,
    /// Window end in seconds (recordings only).
    #[arg(long)]
    pub end: Option<f64>,
    /// Band-pass, resample and normalise before the transform.
    #[arg(long)]
    pub preprocess: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
