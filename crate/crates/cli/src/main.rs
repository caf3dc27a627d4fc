//! `gzm`: dataset synthesis, training, prediction, evaluation and plots.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gzm_core::eval::ReportFormat;
use gzm_core::{Fusion, Validation};

#[derive(Parser, Debug)]
#[command(name = "gzm", version, about = "Gaze-guided hand-motion prediction")]
struct Cli {
    /// Worker threads for training and evaluation.
    #[arg(long, global = true, env = "GZM_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run config (JSON). Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FusionArg {
    Linear,
    Convolution,
    Summation,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Fusion {
        match f {
            FusionArg::Linear => Fusion::Linear,
            FusionArg::Convolution => Fusion::Convolution,
            FusionArg::Summation => Fusion::Summation,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ValidationArg {
    Cs,
    Cm,
    Csm,
}

impl From<ValidationArg> for Validation {
    fn from(v: ValidationArg) -> Validation {
        match v {
            ValidationArg::Cs => Validation::CrossSubject,
            ValidationArg::Cm => Validation::CrossMotion,
            ValidationArg::Csm => Validation::CrossSubjectMotion,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Jsonl => ReportFormat::Jsonl,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TrainSplit {
    /// Train on the training set of this validation mode only.
    #[arg(long, value_enum, requires = "fold")]
    validation: Option<ValidationArg>,
    /// Fold for `--validation`.
    #[arg(long, requires = "validation")]
    fold: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Experiment grid (JSON); overrides the config's grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Evaluate this predictor checkpoint instead of training inline.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of subjects.
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Train the VQ-VAE.
    TrainVqvae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: TrainSplit,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator on a frozen VQ-VAE.
    TrainGenerator {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// VQ-VAE checkpoint.
        #[arg(long)]
        vqvae: PathBuf,
        #[command(flatten)]
        split: TrainSplit,
        #[arg(long, value_enum)]
        gaze: Option<Switch>,
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the rest of a sample from its first frames.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file holding the sample.
        #[arg(long)]
        input: PathBuf,
        /// Line of the sample in `--input`, from 0.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Observed input frames; a multiple of the VQ-VAE downsample factor.
        #[arg(long)]
        frames: usize,
        /// Spacing of partial predictions in seconds.
        #[arg(long, default_value_t = 0.3)]
        step_seconds: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run the experiment grid and write the metric report.
    Evaluate(EvalArgs),
    /// Fusion ablation: every fusion with gaze over the frame sweep.
    Ablate(EvalArgs),
    /// Input-noise sweep at a fixed input length; values are squared.
    NoiseSweep {
        #[command(flatten)]
        eval: EvalArgs,
        /// Input frames of the noise sweep.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Draw report charts, or a top view of a prediction.
    Plot {
        /// Metric report (CSV or JSON Lines).
        #[arg(long, conflicts_with = "prediction")]
        report: Option<PathBuf>,
        /// Prediction file written by `predict`.
        #[arg(long, requires = "input")]
        prediction: Option<PathBuf>,
        /// Ground-truth dataset file for `--prediction`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Radius of the dashed target zone in meters.
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
        /// Output directory for report charts, or the SVG file for a top view.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        log::warn!("could not size the worker pool: {}", e);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gzm: {}", e);
            ExitCode::from(e.code())
        }
    }
}
