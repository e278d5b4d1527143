use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::filter::gaussian_blur;
use super::image::Image;
use crate::error::{Error, Result};

/// Ranges for the random brightness / blur / noise degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpec {
    /// Multiplicative brightness factor range. The default only darkens:
    /// a factor on both sides of 1 cannot be undone from local context.
    pub brightness_range: (f64, f64),
    /// Gaussian blur sigma range, in pixels.
    pub blur_sigma_range: (f64, f64),
    /// Additive noise standard deviation range, in intensity units.
    pub noise_sigma_range: (f64, f64),
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self { brightness_range: (0.4, 0.9), blur_sigma_range: (0.0, 1.5), noise_sigma_range: (0.0, 0.05), seed: 0 }
    }
}

impl DegradationSpec {
    pub fn identity() -> Self {
        Self { brightness_range: (1.0, 1.0), blur_sigma_range: (0.0, 0.0), noise_sigma_range: (0.0, 0.0), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("brightness", self.brightness_range),
            ("blur sigma", self.blur_sigma_range),
            ("noise sigma", self.noise_sigma_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.brightness_range.0 <= 0.0 {
            return Err(Error::invalid("brightness lower bound must be positive"));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Brightness scaling, then Gaussian blur, then additive Gaussian noise;
/// the result is clipped to `[0, 1]`. Deterministic for a given seed.
pub fn degrade(img: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gain = sample_range(&mut rng, spec.brightness_range);
    let sigma = sample_range(&mut rng, spec.blur_sigma_range);
    let noise = sample_range(&mut rng, spec.noise_sigma_range);

    let (w, h) = img.dims();
    let bright = Image::from_clipped(w, h, img.pixels().iter().map(|v| v * gain).collect())?;
    let blurred = gaussian_blur(&bright, sigma);
    if noise == 0.0 {
        return Ok(blurred);
    }
    let dist = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
    let noisy = blurred.pixels().iter().map(|v| v + dist.sample(&mut rng)).collect();
    Image::from_clipped(w, h, noisy)
}
