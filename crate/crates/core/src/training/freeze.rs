//! Read-only handles on trained subtask checkpoints.

use crate::error::{Error, Result};
use crate::networks::{Checkpoint, Network, NetworkKind};

/// A checkpoint whose parameters are marked frozen, with the checksum taken
/// at freeze time.
#[derive(Debug, Clone)]
pub struct FrozenCheckpoint {
    ckpt: Checkpoint,
    checksum: String,
}

/// Freeze a checkpoint. Freezing an already frozen checkpoint yields an
/// equal handle.
pub fn freeze(mut ckpt: Checkpoint) -> FrozenCheckpoint {
    ckpt.params.freeze_all();
    let checksum = ckpt.checksum();
    FrozenCheckpoint { ckpt, checksum }
}

impl FrozenCheckpoint {
    pub fn kind(&self) -> NetworkKind {
        self.ckpt.kind()
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    /// Recompute the checksum and compare it with the one taken at freeze time.
    pub fn verify(&self) -> Result<()> {
        let now = self.ckpt.checksum();
        if now != self.checksum {
            return Err(Error::CorruptCheckpoint(format!(
                "frozen {} weights changed: {} -> {now}",
                self.kind(),
                self.checksum
            )));
        }
        Ok(())
    }

    /// Network with frozen parameters; any optimizer registration fails.
    pub fn network(&self) -> Result<Network<f32>> {
        let mut net = Network::from_checkpoint(&self.ckpt)?;
        net.params.freeze_all();
        Ok(net)
    }
}
