//! `dformer`: synthesize scenes, train and evaluate classifiers, run the
//! block ablation grid, measure stream correlation, and profile costs.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dformer", version, about = "Disentangled window-attention classifiers for hyperspectral patches")]
struct Cli {
    /// Where to write the run manifest (defaults next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Compute per-sample work on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled cube (HSC1 + HSL1).
    Synth(SynthArgs),
    /// Train a model on a cube and write a checkpoint and a CSV log.
    Train(TrainArgs),
    /// Print OA, AA, kappa and the confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Train every block variant under one budget and compare them.
    Ablate(AblateArgs),
    /// Dump pre-fusion streams and report their first canonical correlation.
    Cca(CcaArgs),
    /// Print parameter and FLOP counts.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
struct CubeArgs {
    /// HSC1 reflectance file.
    #[arg(long)]
    cube: PathBuf,
    /// HSL1 label file (defaults to the cube path with an `.hsl` extension).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Side of the square scene.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    bands: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 8)]
    blob: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output reflectance path; labels go next to it with `.hsl`.
    #[arg(long, default_value = "scene.hsc")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cube: CubeArgs,
    /// JSON run config with optional `model`, `data` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seeds model initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "model.dfck")]
    out: PathBuf,
    /// CSV log path (defaults to the checkpoint path with `.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cube: CubeArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which side of the stored split to score.
    #[arg(long, value_enum, default_value_t = commands::SplitChoice::Test)]
    split: commands::SplitChoice,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    cube: CubeArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of seeds per row (0, 1, …).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value = "ablation.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CcaArgs {
    #[command(flatten)]
    cube: CubeArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Stage of the captured block (defaults to the last stage).
    #[arg(long)]
    stage: Option<usize>,
    /// Block within the stage (defaults to its last block).
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = dformer_core::analysis::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value = "features.fdm")]
    out: PathBuf,
    #[arg(long, default_value = "scatter.csv")]
    scatter: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Profile the model stored in a checkpoint.
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Profile the `model` section of a run config (default: toy model).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
