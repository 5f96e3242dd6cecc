//! Command-line pipeline around the `kernood` detector.
//!
//! Every subcommand reads an optional JSON [`RunConfig`], applies flag
//! overrides (flags win), validates all inputs, and only then writes its
//! outputs atomically.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kernood::Variant;

pub use commands::*;
pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};

/// Prefix of the environment variables that stand in for global flags.
pub const ENV_PREFIX: &str = "KERNOOD_";

#[derive(Debug, Parser)]
#[command(
    name = "kernood",
    version,
    about = "Isolation-forest OOD detection for multivariate sequences"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, env = "KERNOOD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Forest seed for train/tune-sigma/bench; replaces the replicate seed
    /// list for generate/ablate.
    #[arg(long, global = true, env = "KERNOOD_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "KERNOOD_JOBS")]
    pub jobs: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true, env = "KERNOOD_FORCE")]
    pub force: bool,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true, env = "KERNOOD_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark suite (train/val/test per scenario and seed).
    Generate(GenerateArgs),
    /// Train a detector model.
    Train(TrainArgs),
    /// Score episodes with a trained model.
    Score(ScoreArgs),
    /// Evaluate score files against episode labels.
    Eval(EvalArgs),
    /// Run the full/rbf_only/mean_only ablation over the scenario grid.
    Ablate(AblateArgs),
    /// Scaling and training-time benchmark.
    Bench(BenchArgs),
    /// Pick the kernel bandwidth on a validation set.
    TuneSigma(TuneArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Regenerate from a manifest written by an earlier run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub train_episodes: Option<usize>,
    #[arg(long)]
    pub val_episodes: Option<usize>,
    #[arg(long)]
    pub test_episodes: Option<usize>,
    /// Also export every episode as CSV with a labels sidecar.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Clean training episodes (JSON lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Labelled validation episodes for bandwidth tuning.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Clean held-out episodes; enables CUSUM calibration.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `episode-NNNN.csv` score files.
    #[arg(long)]
    pub scores: PathBuf,
    /// Episodes file whose onsets provide the labels.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub fpr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Restrict to these scenario ids (repeatable).
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Only time the training protocol.
    #[arg(long)]
    pub skip_scaling: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Comma-separated absolute bandwidths.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.out.is_some() {
        config.paths.out = None;
    }
    let common = Common {
        config,
        seed: cli.seed,
        force: cli.force,
        out: cli.out,
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(
            &common,
            &GenerateOpts {
                manifest: a.manifest,
                train_episodes: a.train_episodes,
                val_episodes: a.val_episodes,
                test_episodes: a.test_episodes,
                csv: a.csv,
            },
        )
        .map(drop),
        Command::Train(a) => cmd_train(
            &common,
            &TrainOpts {
                train: a.train,
                val: a.val,
                holdout: a.holdout,
                variant: a.variant,
                sigma: a.sigma,
            },
        )
        .map(drop),
        Command::Score(a) => cmd_score(
            &common,
            &ScoreOpts {
                model: a.model,
                episodes: a.episodes,
            },
        )
        .map(drop),
        Command::Eval(a) => cmd_eval(
            &common,
            &EvalOpts {
                scores: a.scores,
                labels: a.labels,
                fpr: a.fpr,
            },
        )
        .map(drop),
        Command::Ablate(a) => cmd_ablate(&common, &AblateOpts { scenarios: a.scenarios }).map(drop),
        Command::Bench(a) => cmd_bench(
            &common,
            &BenchOpts {
                repeats: a.repeats,
                skip_scaling: a.skip_scaling,
            },
        )
        .map(drop),
        Command::TuneSigma(a) => cmd_tune_sigma(
            &common,
            &TuneOpts {
                train: a.train,
                val: a.val,
                variant: a.variant,
                grid: a.grid,
            },
        )
        .map(drop),
    }
}

/// Parses `args` and runs the subcommand, honoring `--jobs`.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.to_string()),
    })?;
    match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}
