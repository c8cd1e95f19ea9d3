mod commands;
mod overlay;
mod settings;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Temporal-fusion multi-scale segmentation for X-ray baggage screening.
#[derive(Debug, Parser)]
#[command(name = "tempofuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scan corpus in the on-disk layout.
    Generate(GenerateArgs),
    /// Train a model on a corpus and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint over a corpus split and write metric reports.
    Eval(EvalArgs),
    /// Run inference on one scan sequence directory: masks, boxes, overlays.
    Infer(InferArgs),
}

#[derive(Debug, clap::Args)]
struct GenerateArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scan sequences.
    #[arg(long)]
    sequences: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    frames: Option<usize>,
    /// Square frame size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Total classes including background.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// Corpus directory (from `generate` or matching its layout).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Network preset: tiny, desk, or resnet50.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Fraction of frames assigned to the training split.
    #[arg(long = "train-fraction")]
    train_fraction: Option<f64>,
    /// Write a periodic checkpoint every N epochs (0 = final only).
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fully serial execution for byte-reproducible runs.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for report and box files.
    #[arg(long)]
    out: PathBuf,
    /// Which side of the split to evaluate: eval (default) or train.
    #[arg(long)]
    split: Option<String>,
    #[arg(long = "train-fraction")]
    train_fraction: Option<f64>,
    /// Box-IoU threshold for detection matching.
    #[arg(long = "iou-threshold")]
    iou_threshold: Option<f64>,
    /// Minimum predicted component area in pixels.
    #[arg(long = "min-area")]
    min_area: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding one sequence of numeric .png frames
    /// (masks optional; used for the ground-truth overlay when present).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "min-area")]
    min_area: Option<usize>,
    /// Manifest file naming the classes; defaults to `<input>/../manifest`
    /// when present.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Infer(args) => commands::infer(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
