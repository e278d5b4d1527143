//! Image loading, degradation, synthetic pairs, patches and batching.

pub mod degrade;
pub mod filter;
pub mod image;
pub mod manifest;
pub mod pair;
pub mod patches;
pub mod synth;

pub use self::image::{load_grayscale, save_grayscale, Image};
pub use degrade::{degrade, DegradationSpec};
pub use manifest::{DatasetManifest, Record};
pub use pair::{ImagePair, PairKind};
pub use patches::extract_patches;
pub use synth::{
    synthesize_cross_modal_pair, synthesize_multifocus_pair, synthesize_recon_pair, synthetic_scene,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Random flips applied per sample per epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentation {
    pub hflip: bool,
    pub vflip: bool,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Sample order for one epoch: a pure function of `(n, seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    order
}

/// Apply the epoch's flips to each sample, deterministically.
pub fn augment(pairs: &[ImagePair], aug: Augmentation, seed: u64, epoch: usize) -> Vec<ImagePair> {
    if !aug.hflip && !aug.vflip {
        return pairs.to_vec();
    }
    let mut rng = epoch_rng(seed.wrapping_add(1), epoch);
    pairs
        .iter()
        .map(|p| {
            let h = aug.hflip && rng.random_bool(0.5);
            let v = aug.vflip && rng.random_bool(0.5);
            p.map(|img| {
                let mut out = img.clone();
                if h {
                    out = out.flip_horizontal();
                }
                if v {
                    out = out.flip_vertical();
                }
                Ok(out)
            })
            .expect("flips preserve dimensions")
        })
        .collect()
}
