//! `prepare-data` and `make-scenes`.

use std::fs;
use std::path::{Path, PathBuf};

use auxfuse_core::data::{
    load_grayscale, save_grayscale, synthesize_cross_modal_pair, synthesize_multifocus_pair, synthesize_recon_pair,
    synthetic_scene, DatasetManifest, ImagePair, PairKind, Record,
};
use auxfuse_core::Error;
use rayon::prelude::*;

use super::load_config;
use crate::error::CliError;
use crate::provenance::{self, ConfigSource};
use crate::DataKind;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()).into());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn pair_kind(kind: DataKind) -> PairKind {
    match kind {
        DataKind::CvsSynth => PairKind::CrossModal,
        DataKind::Recon => PairKind::Recon,
        DataKind::Multifocus => PairKind::MultiFocus,
    }
}

pub fn prepare_data(
    input: &Path,
    out: &Path,
    kind: DataKind,
    seed: u64,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let degradation = loaded.config.data.degradation;
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(Error::Manifest { path: input.to_path_buf(), reason: "input directory holds no PNG/PGM images".into() }.into());
    }

    // Each base image has its own seed, so generation order does not matter.
    let pairs: Vec<ImagePair> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let base = load_grayscale(path)?;
            let s = seed.wrapping_add(i as u64);
            match kind {
                DataKind::CvsSynth => synthesize_cross_modal_pair(&base, s),
                DataKind::Recon => synthesize_recon_pair(&base, &degradation.with_seed(s)),
                DataKind::Multifocus => synthesize_multifocus_pair(&base, s),
            }
        })
        .collect::<Result<_, Error>>()?;

    let root = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pairs");
    let image_dir = PathBuf::from(format!("{stem}_images"));
    let mut manifest = DatasetManifest::new(root, pair_kind(kind));
    for (i, pair) in pairs.iter().enumerate() {
        let rel = |part: &str| image_dir.join(part).join(format!("{i:04}.png"));
        let record = Record { a: rel("a"), b: rel("b"), gt: pair.gt.as_ref().map(|_| rel("gt")) };
        save_grayscale(&pair.a, &root.join(&record.a))?;
        save_grayscale(&pair.b, &root.join(&record.b))?;
        if let (Some(gt), Some(p)) = (&pair.gt, &record.gt) {
            save_grayscale(gt, &root.join(p))?;
        }
        manifest.records.push(record);
    }
    manifest.save(out)?;
    provenance::write(root, stem, seed, ConfigSource { config: &loaded.config, text: config.map(|_| loaded.text.as_str()) })?;
    log::info!("wrote {} {} pairs to {}", manifest.len(), manifest.kind, out.display());
    Ok(())
}

pub fn make_scenes(out: &Path, count: usize, width: usize, height: usize, seed: u64) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    fs::create_dir_all(out)?;
    (0..count).into_par_iter().try_for_each(|i| -> Result<(), Error> {
        let scene = synthetic_scene(width, height, seed.wrapping_add(i as u64))?;
        save_grayscale(&scene, &out.join(format!("scene_{i:04}.png")))
    })?;
    log::info!("wrote {count} scenes of {width}x{height} to {}", out.display());
    Ok(())
}
