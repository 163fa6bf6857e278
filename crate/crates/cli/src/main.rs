mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Deterministic ViT pipeline for four-class brain MRI classification.
#[derive(Parser, Debug)]
#[command(name = "neurovit", version, about)]
pub struct Cli {
    /// Worker threads for parallel stages [default: available cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan a class-per-directory dataset and write a stratified split CSV
    Split(SplitArgs),
    /// Write CLAHE-processed PNG copies of every manifest entry
    Preprocess(PreprocessArgs),
    /// Run two-stage fine-tuning and write checkpoints and the report
    Train(TrainArgs),
    /// Score a split and write the metric report and confusion matrices
    Eval(EvalArgs),
    /// Classify one image
    Predict(PredictArgs),
    /// Write an attention-rollout overlay and grid for one image
    Rollout(RolloutArgs),
    /// Write a procedural four-class dataset in the expected layout
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Dataset root holding glioma/, healthy/, meningioma/, pituitary/
    #[arg(long)]
    data_root: PathBuf,
    /// Shuffle seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    /// Output CSV (relative_path,label,split)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Split CSV from `split`
    #[arg(long)]
    manifest: PathBuf,
    /// Source dataset root
    #[arg(long)]
    src: PathBuf,
    /// Destination root for CLAHE PNGs
    #[arg(long)]
    cache: PathBuf,
    /// Tile grid is N x N
    #[arg(long, default_value_t = 8)]
    tiles: usize,
    /// Clip limit as a multiple of the mean bin height
    #[arg(long, default_value_t = 2.0)]
    clip_limit: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and reports [default: runs]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Split CSV [default: manifest.csv]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Image root for manifest paths [default: data]
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// CLAHE cache root; used instead of the data root when given
    #[arg(long)]
    cache_root: Option<PathBuf>,
    /// Model preset: vit_b16 or tiny [default: vit_b16]
    #[arg(long)]
    preset: Option<String>,
    /// Seed for initialization, shuffling, augmentation and dropout [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stage-1 (head warm-up) epochs [default: 5]
    #[arg(long)]
    stage1_epochs: Option<usize>,
    /// Stage-2 (full fine-tuning) epoch cap [default: 15]
    #[arg(long)]
    stage2_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score (not needed with --predictions)
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Split CSV
    #[arg(long, required_unless_present = "predictions")]
    manifest: Option<PathBuf>,
    /// Image root for manifest paths [default: data]
    #[arg(long, default_value = "data")]
    data_root: PathBuf,
    /// CLAHE cache root; used instead of the data root when given
    #[arg(long)]
    cache_root: Option<PathBuf>,
    /// Split to score: train, val or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Average probabilities over five test-time views
    #[arg(long)]
    tta: bool,
    /// Score an existing predictions CSV (label,predicted columns) instead of running the model
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Directory for metrics.txt, metrics.csv, confusion CSVs and predictions.csv
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Images per forward pass
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Average probabilities over five test-time views
    #[arg(long)]
    tta: bool,
    /// Apply CLAHE (8x8 tiles, clip 2.0) before inference
    #[arg(long)]
    clahe: bool,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Output directory for <stem>_rollout.png and <stem>_rollout.csv
    #[arg(long)]
    out: PathBuf,
    /// Heatmap opacity
    #[arg(long, default_value_t = 0.45)]
    alpha: f64,
    /// Apply CLAHE (8x8 tiles, clip 2.0) before inference
    #[arg(long)]
    clahe: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset root
    #[arg(long)]
    out: PathBuf,
    /// Images per class
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    /// Image side in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or environment; exit code 1.
    User(String),
    /// A defect or numerical failure; exit code 2.
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<neurovit::Error> for CliError {
    fn from(e: neurovit::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::User("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Split(a) => commands::split(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::User(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Internal(_)) => {
            eprintln!("internal error: {e}");
            ExitCode::from(2)
        }
    }
}
