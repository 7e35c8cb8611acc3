//! `avtl`: command-line driver for the audiovisual transfer pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use avtl_core::Error;
use clap::{Args, Parser, Subcommand};

// Large per-batch tensors churn the system allocator.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "avtl", version, about = "Audiovisual cross-task transfer laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed. Overrides the config value the subcommand uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root holding the dataset, teacher, posteriors and runs.
    #[arg(long, global = true, default_value = "avtl-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize, balance and split a paired corpus.
    Generate(GenerateArgs),
    /// Pretrain and freeze the audio teacher, then cache its outputs in the manifest.
    PretrainTeacher,
    /// Build the scene posterior table from cached teacher outputs.
    BuildPosteriors,
    /// Train one network.
    Train(TrainArgs),
    /// Re-evaluate a trained run on a split.
    Evaluate(EvaluateArgs),
    /// Train the approach × modality matrix over all seeds and write results.csv.
    Sweep(SweepArgs),
    /// Write the predicted event distributions of a run's test split.
    ExportEmbeddings(RunArgs),
    /// Render a class activation map over a sample image.
    Cam(CamArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Skip offset balancing.
    #[arg(long)]
    no_balance: bool,
}

/// Overrides for the loss and run layout.
#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// none, sq_na, kl_na, sq_nva, kl_nva or le.
    #[arg(long)]
    approach: Option<String>,
    /// fusion, image_only or sound_only.
    #[arg(long)]
    modality: Option<String>,
    /// pretrained_teacher or random.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train on the transfer loss alone.
    #[arg(long)]
    no_scene_loss: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run directory, or a run id under `<out>/runs`.
    #[arg(long)]
    run: String,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated modalities to cover.
    #[arg(long, default_value = "fusion,image_only,sound_only", value_delimiter = ',')]
    modalities: Vec<String>,
    /// Add the transfer-only ablations.
    #[arg(long)]
    ablations: bool,
    /// Search the α × β grid for `le` on the validation split instead.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct CamArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Record id; defaults to the first test sample.
    #[arg(long)]
    sample: Option<String>,
    /// Scene class to explain; defaults to the predicted class.
    #[arg(long)]
    class: Option<usize>,
    /// Output PNG; defaults to `cam_<sample>.png` in the run directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failures caused by the request rather than by the computation.
fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::MissingPosteriors | Error::Input(_) | Error::Range(_) | Error::State(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        return report(&e);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error[{}]: {msg}", e.class());
    ExitCode::from(if is_validation(e) { 3 } else { 1 })
}
