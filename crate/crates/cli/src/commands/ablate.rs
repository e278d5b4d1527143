//! `ablate`: train main-network variants and compare them side by side.

use std::path::Path;

use auxfuse_core::config::RunConfig;
use auxfuse_core::data::DatasetManifest;
use auxfuse_core::fusion::{CriterionKind, FusionCriterion};
use auxfuse_core::metrics::{summary_csv, write_metric_charts, MetricReport};
use auxfuse_core::networks::{LateralConfig, Stage};
use auxfuse_core::training::final_checkpoint_path;

use super::evaluate::score_manifest;
use super::train::run_stage;
use super::{load_fusion, SubtaskPaths};
use crate::error::CliError;
use crate::provenance::{self, ConfigSource};
use crate::AblationMode;

/// Label and configuration of every variant of `mode`.
pub fn variants(mode: AblationMode, base: &RunConfig) -> Vec<(String, RunConfig)> {
    match mode {
        AblationMode::Criteria => [
            CriterionKind::Nonlinear,
            CriterionKind::Maximum,
            CriterionKind::Sum,
            CriterionKind::WeightedAverage,
        ]
        .into_iter()
        .map(|kind| {
            let mut cfg = base.clone();
            let c = FusionCriterion { kind, fixed_weight: base.fusion.fixed_weight };
            cfg.fusion = cfg.fusion.with_criterion(c);
            (kind.as_str().to_owned(), cfg)
        })
        .collect(),
        AblationMode::Tasks => [("main_only", false, false), ("main_subtask1", true, false), ("main_subtask2", false, true), ("full", true, true)]
            .into_iter()
            .map(|(label, s1, s2)| {
                let mut cfg = base.clone();
                cfg.model.laterals = LateralConfig { from_subtask1: s1, from_subtask2: s2 };
                (label.to_owned(), cfg)
            })
            .collect(),
    }
}

/// Subtask checkpoints: reused from the configured output directory when
/// both exist, otherwise trained into `{out}/subtasks`.
fn subtasks(config: &RunConfig, text: &str, out: &Path) -> Result<SubtaskPaths, CliError> {
    let existing = config.out_dir();
    let s1 = final_checkpoint_path(&existing, Stage::Subtask1);
    let s2 = final_checkpoint_path(&existing, Stage::Subtask2);
    if s1.is_file() && s2.is_file() {
        log::info!("reusing subtask checkpoints from {}", existing.display());
        return Ok(SubtaskPaths { subtask1: Some(s1), subtask2: Some(s2) });
    }
    let dir = out.join("subtasks");
    let none = SubtaskPaths::default();
    run_stage(Stage::Subtask1, config, Some(text), &dir, None, &none)?;
    run_stage(Stage::Subtask2, config, Some(text), &dir, None, &none)?;
    Ok(SubtaskPaths {
        subtask1: Some(final_checkpoint_path(&dir, Stage::Subtask1)),
        subtask2: Some(final_checkpoint_path(&dir, Stage::Subtask2)),
    })
}

pub fn ablate(mode: AblationMode, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let loaded = RunConfig::load(config_path)?;
    let base = &loaded.config;
    let manifest_path = base
        .eval_manifest()
        .ok_or_else(|| CliError::Usage("ablation needs eval.manifest or a main-stage manifest".into()))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    std::fs::create_dir_all(out)?;
    provenance::write(out, "ablate", base.train.seed, ConfigSource { config: base, text: Some(&loaded.text) })?;

    let priors = subtasks(base, &loaded.text, out)?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for (label, cfg) in variants(mode, base) {
        let dir = out.join(&label);
        run_stage(Stage::Main, &cfg, Some(&loaded.text), &dir, None, &priors)?;
        let setup = load_fusion(&final_checkpoint_path(&dir, Stage::Main), &priors)?;
        let report = score_manifest(&setup, &manifest, &cfg.ssim_params(), &label, &cfg.eval.dataset, None)?;
        report.write_csv(&dir.join("report.csv"))?;
        reports.push(report);
    }
    let refs: Vec<&MetricReport> = reports.iter().collect();
    std::fs::write(out.join("comparison.csv"), summary_csv(&refs)?)?;
    write_metric_charts(&refs, &out.join("plots"))?;
    log::info!("compared {} variants in {}", reports.len(), out.join("comparison.csv").display());
    Ok(())
}
