//! Experiment driver: configuration, training, evaluation, sweeps and
//! gradient checks behind one command line.

pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use protoadapt_core::Error;
use protoadapt_tensor::TensorError;

pub use config::{Dataset, ExperimentConfig, Optim};
pub use report::{Arm, EvalReport, EvalRow};

#[derive(Debug, Parser)]
#[command(name = "protoadapt", version, about = "Prototypical networks with support-set fine-tuning")]
pub struct Cli {
    /// Experiment config (TOML). Defaults to the preset of `--dataset`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the evaluation worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the command's primary output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train an encoder and write a checkpoint plus training history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on meta-test episodes and write a report.
    Eval(EvalArgs),
    /// Paired accuracy table over a grid of fine-tuning step counts.
    Sweep(SweepArgs),
    /// Finite-difference check of every op and the composite losses.
    Gradcheck,
    /// Write a synthetic handwritten-glyph dataset.
    Generate(GenerateArgs),
    /// Print a preset config.
    Init {
        #[arg(long, value_enum, default_value = "omniglot")]
        dataset: Dataset,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TaskArgs {
    /// Dataset preset, used when no `--config` is given.
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub shot: Option<usize>,
    #[arg(long)]
    pub query: Option<usize>,
    /// Meta-train episodes for `train`, evaluation episodes otherwise.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AdaptArgs {
    /// Adaptation preset name.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<Optim>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Continue from the existing checkpoint up to the configured episode total.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum EvalMode {
    Baseline,
    Adapted,
    #[default]
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum EvalSplit {
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    #[arg(long, value_enum, default_value = "paired")]
    pub mode: EvalMode,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    /// Comma-separated step counts, starting at 0.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    pub alphabets: usize,
    #[arg(long, default_value_t = 20)]
    pub characters: usize,
    #[arg(long, default_value_t = 20)]
    pub drawers: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("gradcheck failed for {failed} of {total} cases")]
    GradcheckFailed { failed: usize, total: usize },
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::GradcheckFailed { .. } => 3,
            CliError::Output(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Contract(_) => 1,
                Error::Ingestion { .. } | Error::Sampling(_) | Error::Io { .. } | Error::Checkpoint(_) => 2,
                Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. }) => 3,
                Error::Tensor(_) => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs a parsed command line, writing progress and tables to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Train(args) => commands::train(&commands::resolve(cli, &args.task, None)?, args.resume, out),
        Command::Eval(args) => {
            let cfg = commands::resolve(cli, &args.task, Some(&args.adapt))?;
            commands::eval(&cfg, args.mode, args.split, out)
        }
        Command::Sweep(args) => {
            let mut cfg = commands::resolve(cli, &args.task, Some(&args.adapt))?;
            if let Some(grid) = &args.grid {
                cfg.adaptation.step_grid = grid.clone();
            }
            commands::sweep(&cfg, args.split, out)
        }
        Command::Gradcheck => commands::gradcheck(cli.seed.unwrap_or(0), out),
        Command::Generate(args) => {
            let cfg = commands::resolve(cli, &TaskArgs::default(), None)?;
            let root = cli.out.clone().unwrap_or(cfg.experiment.data_root.clone());
            commands::generate(&root, args, cfg.experiment.master_seed, out)
        }
        Command::Init { dataset } => {
            let text = ExperimentConfig::preset(*dataset).render();
            match &cli.out {
                Some(path) => report::write_text(path, &text)?,
                None => out.write_all(text.as_bytes())?,
            }
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Help and version output exit with 0, parse errors with 1.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
