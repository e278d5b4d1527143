//! `train`: one stage of the staged schedule.

use std::path::{Path, PathBuf};

use auxfuse_core::config::RunConfig;
use auxfuse_core::networks::{load_checkpoint, Stage};
use auxfuse_core::training::{train_stage, Priors, StageOutcome, TrainOptions};

use super::SubtaskPaths;
use crate::error::CliError;
use crate::provenance::{self, ConfigSource};

#[derive(Debug, Default)]
pub struct TrainArgs {
    pub resume: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub subtask1: Option<PathBuf>,
    pub subtask2: Option<PathBuf>,
}

/// Checkpoints of earlier stages that `stage` can use. Main requires both;
/// subtask 2 uses subtask 1 for its perceptual features when present.
pub fn load_priors(stage: Stage, dir: &Path, paths: &SubtaskPaths) -> Result<Priors, CliError> {
    let load = |s: Stage| -> Result<_, CliError> {
        let path = paths.resolve(s, dir);
        if !path.is_file() {
            log::debug!("no {s} checkpoint at {}", path.display());
            return Ok(None);
        }
        Ok(Some(load_checkpoint(&path)?))
    };
    let s1 = match stage {
        Stage::Subtask2 | Stage::Main => load(Stage::Subtask1)?,
        Stage::Subtask1 => None,
    };
    let s2 = if stage == Stage::Main { load(Stage::Subtask2)? } else { None };
    Ok(Priors::new(s1, s2)?)
}

/// Train `stage` with `config` into `out_dir` and write provenance.
pub fn run_stage(
    stage: Stage,
    config: &RunConfig,
    config_text: Option<&str>,
    out_dir: &Path,
    resume: Option<&Path>,
    subtasks: &SubtaskPaths,
) -> Result<StageOutcome, CliError> {
    let cfg = config.stage_config(stage);
    let priors = load_priors(stage, out_dir, subtasks)?;
    priors.require(stage)?;
    let resume = resume.map(load_checkpoint).transpose()?;
    provenance::write(out_dir, stage.as_str(), cfg.seed, ConfigSource { config, text: config_text })?;
    log::info!("training {stage} into {}", out_dir.display());
    let outcome = train_stage(&cfg, &priors, &TrainOptions { resume, out_dir: Some(out_dir.to_path_buf()) })?;
    log::info!(
        "{stage}: {} steps, loss {:.6} -> {:.6}, {:.1} s",
        outcome.log.rows.len(),
        outcome.log.first_total().unwrap_or(f64::NAN),
        outcome.log.last_total().unwrap_or(f64::NAN),
        outcome.log.wall_clock_secs
    );
    Ok(outcome)
}

pub fn train(stage: Stage, config_path: &Path, args: TrainArgs) -> Result<(), CliError> {
    let loaded = RunConfig::load(config_path)?;
    let mut config = loaded.config;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let out_dir = match &args.out {
        Some(p) => p.clone(),
        None => config.out_dir(),
    };
    let subtasks = SubtaskPaths { subtask1: args.subtask1, subtask2: args.subtask2 };
    run_stage(stage, &config, Some(&loaded.text), &out_dir, args.resume.as_deref(), &subtasks)?;
    Ok(())
}
