//! `evaluate`: fuse every pair of a manifest and score the results.

use std::path::{Path, PathBuf};

use auxfuse_core::data::{save_grayscale, DatasetManifest, Image};
use auxfuse_core::losses::SsimParams;
use auxfuse_core::metrics::{evaluate_pair, summary_csv, write_row_charts, MetricReport, MetricRow};
use auxfuse_core::networks::forward_fuse;
use auxfuse_core::Error;
use rayon::prelude::*;

use super::{load_config, load_fusion, FusionSetup, SubtaskPaths};
use crate::error::CliError;
use crate::provenance::{self, ConfigSource};

pub struct EvaluateArgs {
    pub manifest: PathBuf,
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub plots: Option<PathBuf>,
    pub fused_dir: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub subtasks: SubtaskPaths,
}

/// Fuse and score every pair. Fusion runs in order on this thread; metric
/// computation is spread over the worker pool.
pub fn score_manifest(
    setup: &FusionSetup,
    manifest: &DatasetManifest,
    ssim: &SsimParams,
    method: &str,
    dataset: &str,
    fused_dir: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let pairs = manifest.load_pairs()?;
    if pairs.is_empty() {
        return Err(Error::Manifest { path: manifest.root.clone(), reason: "manifest has no pairs".into() }.into());
    }
    let names: Vec<String> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| r.a.file_stem().and_then(|s| s.to_str()).map_or_else(|| format!("{i:04}"), str::to_owned))
        .collect();
    let mut fused: Vec<Image> = Vec::with_capacity(pairs.len());
    for (pair, name) in pairs.iter().zip(&names) {
        let f = forward_fuse(&setup.net, &setup.aux, &pair.a, &pair.b)?.fused;
        if let Some(dir) = fused_dir {
            save_grayscale(&f, &dir.join(format!("{name}.png")))?;
        }
        fused.push(f);
    }
    let rows: Vec<MetricRow> = pairs
        .par_iter()
        .zip(&fused)
        .map(|(pair, f)| evaluate_pair(f, &pair.a, &pair.b, ssim))
        .collect::<Result<_, Error>>()?;
    let mut report = MetricReport::new(method, dataset);
    for (name, row) in names.into_iter().zip(rows) {
        report.push(name, row);
    }
    Ok(report)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}_{suffix}"))
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let loaded = load_config(args.config.as_deref())?;
    let cfg = &loaded.config;
    let setup = load_fusion(&args.ckpt, &args.subtasks)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let ssim = SsimParams::with_window(cfg.eval.ssim_window);
    let report =
        score_manifest(&setup, &manifest, &ssim, &cfg.eval.method, &cfg.eval.dataset, args.fused_dir.as_deref())?;

    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(&dir)?;
    report.write_csv(&args.out)?;
    std::fs::write(sibling(&args.out, "summary.csv"), summary_csv(&[&report])?)?;
    if let Some(plots) = &args.plots {
        write_row_charts(&report, plots)?;
    }
    let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    provenance::write(&dir, stem, setup.net.header.seed, ConfigSource {
        config: cfg,
        text: args.config.as_ref().map(|_| loaded.text.as_str()),
    })?;
    log::info!("scored {} pairs into {}", report.rows.len(), args.out.display());
    Ok(())
}
