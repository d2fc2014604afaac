use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfgan_core::data::{AugmentKind, DefectClass};

mod commands;

/// Surface-defect dataset enlargement with a DCGAN and downstream
/// classification experiments.
#[derive(Parser, Debug)]
#[command(name = "dfgan", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `section.key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides every seed in the settings.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a dataset from annotated crops, a sliding window or a manifest.
    Ingest(IngestArgs),
    /// Write the deterministic synthetic corpus.
    Synth(SynthArgs),
    /// Balance the training partition with classical augmentation.
    Augment(AugmentArgs),
    /// Train (or resume) a GAN on one class of a dataset.
    GanTrain(GanTrainArgs),
    /// Draw images from a trained generator.
    GanSample(GanSampleArgs),
    /// Walk the latent space between random endpoints.
    GanInterpolate(GanInterpolateArgs),
    /// Fréchet distance between real and generated images.
    Fid(FidArgs),
    /// Joint 2-D t-SNE embedding of real and generated images.
    Tsne(TsneArgs),
    /// Blinded mixed grid of real and generated images plus its key.
    TuringSheet(TuringSheetArgs),
    /// Train and evaluate the defect classifier once.
    ClfTrain(ClfTrainArgs),
    /// Classification experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Aggregate saved repeat reports into result and comparison tables.
    Report(ReportArgs),
    /// GAN hyperparameter grid ranked by Fréchet distance.
    Sweep(SweepArgs),
    /// Print the effective settings as a flat config file.
    Config,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Crop annotations CSV (`source,x,y,w,h,label`).
    #[arg(long, requires = "sources", conflicts_with_all = ["window", "manifest"])]
    pub annotations: Option<PathBuf>,
    /// Directory holding `<source>.png` for every annotated source.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Source image for sliding-window intact crops.
    #[arg(long, requires = "window", conflicts_with = "manifest")]
    pub auto: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub stride: usize,
    /// Existing `path,label[,partition]` manifest.
    #[arg(long, requires = "images")]
    pub manifest: Option<PathBuf>,
    /// Directory the manifest paths are relative to.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Resize every crop to this square side.
    #[arg(long)]
    pub size: Option<usize>,
    /// Assign train/test partitions using `experiment.train_counts`.
    #[arg(long)]
    pub split: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Per-class counts `pitting,intact,rust`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub counts: Option<Vec<usize>>,
    /// Assign train/test partitions using `experiment.train_counts`.
    #[arg(long)]
    pub split: bool,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Per-class size after balancing (default `experiment.augment_target`).
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "flip,rotate,translate,noise")]
    pub kinds: Vec<AugmentKind>,
}

#[derive(Args, Debug)]
pub struct GanTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub class: DefectClass,
    /// Loops to run (default `gan.training_loops`).
    #[arg(long)]
    pub loops: Option<usize>,
    /// Continue from a checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GanSampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub columns: usize,
}

#[derive(Args, Debug)]
pub struct GanInterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Number of independent endpoint pairs, one row each.
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
}

/// Generated images come from a directory or from a checkpoint.
#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct GeneratedSource {
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FidArgs {
    #[arg(long, required_unless_present = "real_features")]
    pub real: Option<PathBuf>,
    #[arg(long, conflicts_with = "real_features")]
    pub generated: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["generated", "real_features"])]
    pub checkpoint: Option<PathBuf>,
    /// Restrict the real set to one class.
    #[arg(long)]
    pub class: Option<DefectClass>,
    /// Pixel PCA width.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Fresh generator draws to average over (checkpoint only).
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Precomputed real features (`dim_0..` CSV); skips pixel PCA.
    #[arg(long, requires = "gen_features")]
    pub real_features: Option<PathBuf>,
    #[arg(long, requires = "real_features")]
    pub gen_features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TsneArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[command(flatten)]
    pub source: GeneratedSource,
    #[arg(long)]
    pub class: Option<DefectClass>,
    /// Generated images drawn from a checkpoint.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Pixel PCA width before the embedding.
    #[arg(long, default_value_t = 30)]
    pub dim: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
}

#[derive(Args, Debug)]
pub struct TuringSheetArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[command(flatten)]
    pub source: GeneratedSource,
    #[arg(long)]
    pub class: Option<DefectClass>,
    /// Images per side.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct ClfTrainArgs {
    /// Dataset; its `test` partition is the test set unless `--test` is given.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// Run tasks end to end (all configured tasks unless `--task` is given).
    Run(ExperimentRunArgs),
}

#[derive(Args, Debug)]
pub struct ExperimentRunArgs {
    #[arg(long = "task", value_parser = clap::value_parser!(u64).range(1..=6))]
    pub tasks: Vec<u64>,
    /// Dataset to use instead of the synthetic corpus.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding `task<N>/repeat_<r>.json`.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub baseline: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub class: DefectClass,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
