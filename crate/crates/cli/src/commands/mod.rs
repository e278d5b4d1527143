pub mod ablate;
pub mod describe;
pub mod evaluate;
pub mod fuse;
pub mod prepare;
pub mod train;

use std::path::{Path, PathBuf};

use auxfuse_core::config::{LoadedConfig, RunConfig};
use auxfuse_core::networks::{load_checkpoint, Auxiliary, Network, NetworkKind, Stage};
use auxfuse_core::training::final_checkpoint_path;
use auxfuse_core::Error;

use crate::error::CliError;

/// Explicit subtask checkpoint locations.
#[derive(Debug, Clone, Default)]
pub struct SubtaskPaths {
    pub subtask1: Option<PathBuf>,
    pub subtask2: Option<PathBuf>,
}

impl SubtaskPaths {
    /// The explicit path, or `{stage}.ckpt` inside `dir`.
    pub fn resolve(&self, stage: Stage, dir: &Path) -> PathBuf {
        let explicit = match stage {
            Stage::Subtask1 => self.subtask1.clone(),
            Stage::Subtask2 => self.subtask2.clone(),
            Stage::Main => None,
        };
        explicit.unwrap_or_else(|| final_checkpoint_path(dir, stage))
    }
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(LoadedConfig { config: RunConfig::default(), text: String::new() }),
    }
}

fn load_prior(stage: Stage, path: &Path) -> Result<Network<f32>, CliError> {
    if !path.is_file() {
        return Err(Error::MissingPrerequisite(stage.as_str().into()).into());
    }
    Ok(Network::from_checkpoint(&load_checkpoint(path)?)?)
}

/// A fusion checkpoint together with the frozen subtask networks its
/// lateral connections read from.
pub struct FusionSetup {
    pub net: Network<f32>,
    pub aux: Auxiliary<f32>,
}

pub fn load_fusion(ckpt: &Path, subtasks: &SubtaskPaths) -> Result<FusionSetup, CliError> {
    let net = Network::from_checkpoint(&load_checkpoint(ckpt)?)?;
    let aux = match net.kind() {
        NetworkKind::ReconSubtask1 => {
            return Err(CliError::Usage(format!("{} holds a reconstruction network, not a fusion network", ckpt.display())))
        }
        NetworkKind::MultifocusSubtask2 => Auxiliary::none(),
        NetworkKind::FusionMain => {
            let dir = ckpt.parent().unwrap_or(Path::new("."));
            let laterals = net.spec().model.laterals;
            let recon = laterals
                .from_subtask1
                .then(|| load_prior(Stage::Subtask1, &subtasks.resolve(Stage::Subtask1, dir)))
                .transpose()?;
            let mf = laterals
                .from_subtask2
                .then(|| load_prior(Stage::Subtask2, &subtasks.resolve(Stage::Subtask2, dir)))
                .transpose()?;
            Auxiliary::from_networks(laterals, recon.as_ref(), mf.as_ref())?
        }
    };
    Ok(FusionSetup { net, aux })
}
