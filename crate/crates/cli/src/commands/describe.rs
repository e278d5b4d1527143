//! `describe`: layer tables and stored reference scores.

use std::io::{ErrorKind, Write};
use std::path::Path;

use auxfuse_core::metrics::render_reference_mos;
use auxfuse_core::networks::{instantiate, load_checkpoint, Network, NetworkKind, NetworkSpec};

use super::load_config;
use crate::error::CliError;

pub fn describe(
    config: Option<&Path>,
    kind: Option<NetworkKind>,
    ckpt: Option<&Path>,
    reference_mos: bool,
) -> Result<(), CliError> {
    if reference_mos {
        return emit(&render_reference_mos());
    }
    if let Some(path) = ckpt {
        let c = load_checkpoint(path)?;
        let net = Network::from_checkpoint(&c)?;
        return emit(&format!("checksum {}\n{}", c.checksum(), net.describe()));
    }
    let cfg = load_config(config)?.config;
    let kinds = match kind {
        Some(k) => vec![k],
        None => vec![NetworkKind::ReconSubtask1, NetworkKind::MultifocusSubtask2, NetworkKind::FusionMain],
    };
    let mut text = String::new();
    for k in kinds {
        let net = instantiate(NetworkSpec::new(k, cfg.model, cfg.fusion), cfg.train.seed)?;
        text += &net.describe();
        text.push('\n');
    }
    emit(&text)
}

/// Write to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
