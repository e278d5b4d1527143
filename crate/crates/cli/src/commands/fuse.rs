//! `fuse`: one pair through a trained fusion network.

use std::path::Path;

use auxfuse_core::data::{load_grayscale, save_grayscale};
use auxfuse_core::fusion::FusionCriterion;
use auxfuse_core::networks::forward_fuse;
use auxfuse_core::Error;

use super::{load_fusion, SubtaskPaths};
use crate::error::CliError;

pub fn fuse(
    ckpt: &Path,
    a: &Path,
    b: &Path,
    out: &Path,
    dump_weights: Option<&Path>,
    expect_criterion: Option<&str>,
    subtasks: SubtaskPaths,
) -> Result<(), CliError> {
    let expected = expect_criterion
        .map(|s| s.parse::<FusionCriterion>().map_err(|e| CliError::Usage(e.to_string())))
        .transpose()?;
    let setup = load_fusion(ckpt, &subtasks)?;
    if let Some(expected) = expected {
        let found = setup.net.criterion();
        if found != expected {
            return Err(Error::CriterionMismatch { found: found.to_string(), expected: expected.to_string() }.into());
        }
    }
    let img_a = load_grayscale(a)?;
    let img_b = load_grayscale(b)?;
    let result = forward_fuse(&setup.net, &setup.aux, &img_a, &img_b)?;
    save_grayscale(&result.fused, out)?;
    if let Some(dir) = dump_weights {
        for (i, map) in result.maps.as_images()?.iter().enumerate() {
            save_grayscale(map, &dir.join(format!("w{}.png", i + 1)))?;
        }
    }
    log::info!("fused {}x{} with {} into {}", img_a.width(), img_a.height(), setup.net.criterion(), out.display());
    Ok(())
}
