//! `auxfuse` command-line tool.

mod commands;
mod error;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use auxfuse_core::networks::{NetworkKind, Stage};
use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

/// Caps the worker threads used for per-pair work.
pub const THREADS_ENV: &str = "AUXFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "auxfuse", version, about = "Multi-task image fusion with auxiliary subtask networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    /// Cross-modal pairs synthesized from base scenes.
    CvsSynth,
    /// Degraded/clean pairs for the reconstruction subtask.
    Recon,
    /// Complementary-defocus pairs with all-in-focus ground truth.
    Multifocus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationMode {
    Criteria,
    Tasks,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training pairs and a manifest from a directory of base images.
    PrepareData {
        #[arg(long)]
        input: PathBuf,
        /// Manifest to write; images go next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write procedurally generated base scenes.
    MakeScenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 80)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subtask checkpoints; default to the ones in the output directory.
        #[arg(long)]
        subtask1: Option<PathBuf>,
        #[arg(long)]
        subtask2: Option<PathBuf>,
    },
    /// Fuse two registered images with a trained checkpoint.
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the two weight maps as images.
        #[arg(long)]
        dump_weights: Option<PathBuf>,
        /// Assert the checkpoint's criterion; it cannot be changed here.
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long)]
        subtask1: Option<PathBuf>,
        #[arg(long)]
        subtask2: Option<PathBuf>,
    },
    /// Fuse every pair of a manifest and write a metric report.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Also save every fused image here.
        #[arg(long)]
        fused_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        subtask1: Option<PathBuf>,
        #[arg(long)]
        subtask2: Option<PathBuf>,
    },
    /// Train and compare main-network variants.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblationMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print layer tables.
    Describe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kind: Option<NetworkKind>,
        #[arg(long, conflicts_with_all = ["config", "kind"])]
        ckpt: Option<PathBuf>,
        /// Print the stored reference opinion scores instead.
        #[arg(long)]
        reference_mos: bool,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::PrepareData { input, out, kind, seed, config } => {
            commands::prepare::prepare_data(&input, &out, kind, seed, config.as_deref())
        }
        Command::MakeScenes { out, count, width, height, seed } => {
            commands::prepare::make_scenes(&out, count, width, height, seed)
        }
        Command::Train { stage, config, resume, seed, out, subtask1, subtask2 } => commands::train::train(
            stage,
            &config,
            commands::train::TrainArgs { resume, seed, out, subtask1, subtask2 },
        ),
        Command::Fuse { ckpt, a, b, out, dump_weights, criterion, subtask1, subtask2 } => commands::fuse::fuse(
            &ckpt,
            &a,
            &b,
            &out,
            dump_weights.as_deref(),
            criterion.as_deref(),
            commands::SubtaskPaths { subtask1, subtask2 },
        ),
        Command::Evaluate { manifest, ckpt, out, plots, fused_dir, config, subtask1, subtask2 } => {
            commands::evaluate::evaluate(commands::evaluate::EvaluateArgs {
                manifest,
                ckpt,
                out,
                plots,
                fused_dir,
                config,
                subtasks: commands::SubtaskPaths { subtask1, subtask2 },
            })
        }
        Command::Ablate { mode, config, out } => commands::ablate::ablate(mode, &config, &out),
        Command::Describe { config, kind, ckpt, reference_mos } => {
            commands::describe::describe(config.as_deref(), kind, ckpt.as_deref(), reference_mos)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
