//! Procedural scenes and paired-modality generators.
//!
//! Modality A mimics a low-light enhanced-vision camera (dark and noisy);
//! modality B mimics a synthetic-vision rendering (smooth shading with
//! emphasized contours).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::degrade::{degrade, DegradationSpec};
use super::filter::{gaussian_blur, gradient_magnitude};
use super::image::Image;
use super::pair::{ImagePair, PairKind};
use crate::error::Result;

const LOW_LIGHT_GAIN: f64 = 0.3;
const LOW_LIGHT_OFFSET: f64 = 0.02;
const LOW_LIGHT_NOISE: f64 = 0.03;
const RENDER_SMOOTHING: f64 = 1.0;
const RENDER_SHADE: f64 = 0.3;
const RENDER_EDGE_GAIN: f64 = 2.0;

/// The dark, noisy modality.
pub fn low_light_view(base: &Image, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, LOW_LIGHT_NOISE).expect("positive sigma");
    let px = base
        .pixels()
        .iter()
        .map(|v| LOW_LIGHT_GAIN * v + LOW_LIGHT_OFFSET + noise.sample(&mut rng))
        .collect();
    Image::from_clipped(base.width(), base.height(), px)
}

/// The smooth, edge-emphasized modality: dimmed smoothed shading plus the
/// gradient magnitude of the smoothed scene.
pub fn edge_rendering(base: &Image) -> Result<Image> {
    let smooth = gaussian_blur(base, RENDER_SMOOTHING);
    let edges = gradient_magnitude(&smooth);
    let px = smooth.pixels().iter().zip(&edges).map(|(s, e)| RENDER_SHADE * s + RENDER_EDGE_GAIN * e).collect();
    Image::from_clipped(base.width(), base.height(), px)
}

pub fn synthesize_cross_modal_pair(base: &Image, seed: u64) -> Result<ImagePair> {
    ImagePair::new(low_light_view(base, seed)?, edge_rendering(base)?, None, PairKind::CrossModal)
}

/// Complementary defocus: `a` is sharp on one side of a random boundary and
/// blurred on the other, `b` the reverse; the base is the ground truth.
pub fn synthesize_multifocus_pair(base: &Image, seed: u64) -> Result<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = base.dims();
    let sigma = rng.random_range(1.5..3.0);
    let vertical = rng.random_bool(0.5);
    let extent = if vertical { w } else { h };
    let cut = if extent >= 4 { rng.random_range(extent / 4..=3 * extent / 4) } else { extent / 2 };
    let blurred = gaussian_blur(base, sigma);
    let near = |x: usize, y: usize| if vertical { x < cut } else { y < cut };
    let a = Image::from_fn(w, h, |x, y| if near(x, y) { base.get(x, y) } else { blurred.get(x, y) })?;
    let b = Image::from_fn(w, h, |x, y| if near(x, y) { blurred.get(x, y) } else { base.get(x, y) })?;
    ImagePair::new(a, b, Some(base.clone()), PairKind::MultiFocus)
}

/// Degraded input paired with the clean original.
pub fn synthesize_recon_pair(base: &Image, spec: &DegradationSpec) -> Result<ImagePair> {
    ImagePair::new(degrade(base, spec)?, base.clone(), None, PairKind::Recon)
}

/// A random test scene: shaded background, boxes, discs and a texture band.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let gx = rng.random_range(-0.4..0.4);
    let gy = rng.random_range(-0.4..0.4);
    let base = rng.random_range(0.3..0.6);
    let mut px: Vec<f64> = (0..height)
        .flat_map(|y| (0..width).map(move |x| base + gx * (x as f64 / w - 0.5) + gy * (y as f64 / h - 0.5)))
        .collect();

    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let value = rng.random_range(0.0..1.0);
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let rx = rng.random_range(0.05..0.3) * w;
        let ry = rng.random_range(0.05..0.3) * h;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    px[y * width + x] = value;
                }
            }
        }
    }

    let freq = rng.random_range(0.2..0.8);
    let amp = rng.random_range(0.05..0.15);
    let y0 = rng.random_range(0.0..h * 0.7);
    let band = h * 0.25;
    for y in 0..height {
        if (y as f64) < y0 || (y as f64) > y0 + band {
            continue;
        }
        for x in 0..width {
            px[y * width + x] += amp * (freq * x as f64).sin() * (freq * 0.7 * y as f64).cos();
        }
    }
    Image::from_clipped(width, height, px)
}
