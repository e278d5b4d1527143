//! Full- and no-reference image quality measures.

use crate::data::Image;
use crate::error::{Error, Result};

/// Mean of `sqrt((dx^2 + dy^2) / 2)` with forward differences, over the
/// pixels that have both a right and a lower neighbour.
pub fn average_gradient(img: &Image) -> Result<f64> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::invalid(format!("average gradient needs at least 2x2 pixels, got {w}x{h}")));
    }
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let v = img.get(x, y);
            let dx = img.get(x + 1, y) - v;
            let dy = img.get(x, y + 1) - v;
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(sum / ((w - 1) * (h - 1)) as f64)
}

/// Shannon entropy in bits of the `bins`-bin intensity histogram.
pub fn entropy(img: &Image, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("entropy needs at least two bins"));
    }
    let mut hist = vec![0usize; bins];
    for &v in img.pixels() {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        hist[b] += 1;
    }
    let n = img.pixels().len() as f64;
    Ok(hist
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            p * (1.0 / p).log2()
        })
        .sum())
}

/// Smallest image side accepted by [`vif`].
pub const VIF_MIN_SIZE: usize = 32;
const VIF_SCALES: usize = 4;
const VIF_NOISE_VAR: f64 = 2.0;
const VIF_TINY: f64 = 1e-10;

/// A row-major plane of arbitrary real values.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect() }
    }

    /// Separable 'valid' filtering; empty when the kernel does not fit.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        if self.w < n || self.h < n {
            return Plane { w: 0, h: 0, v: Vec::new() };
        }
        let (ow, oh) = (self.w - n + 1, self.h - n + 1);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                rows[y * ow + x] = (0..n).map(|i| k[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    fn decimate(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = Vec::with_capacity(w * h);
        for y in (0..self.h).step_by(2) {
            for x in (0..self.w).step_by(2) {
                v.push(self.v[y * self.w + x]);
            }
        }
        Plane { w, h, v }
    }
}

/// Normalized 1-D Gaussian of `n` taps with standard deviation `n / 5`.
fn vif_kernel(n: usize) -> Vec<f64> {
    let sigma = n as f64 / 5.0;
    let c = (n - 1) as f64 / 2.0;
    let g: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Pixel-domain visual information fidelity of `dist` with respect to
/// `reference`, over four scales, on an 8-bit intensity scale.
///
/// A featureless reference carries no information; the result is then 1 for
/// an identical image and 0 otherwise.
pub fn vif(reference: &Image, dist: &Image) -> Result<f64> {
    if reference.dims() != dist.dims() {
        return Err(Error::shape(format!("vif inputs differ: {:?} vs {:?}", reference.dims(), dist.dims())));
    }
    let (w, h) = reference.dims();
    if w < VIF_MIN_SIZE || h < VIF_MIN_SIZE {
        return Err(Error::invalid(format!("vif needs at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE} pixels, got {w}x{h}")));
    }
    let scaled = |img: &Image| Plane { w, h, v: img.pixels().iter().map(|p| p * 255.0).collect() };
    let mut r = scaled(reference);
    let mut d = scaled(dist);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=VIF_SCALES {
        let n = (1usize << (VIF_SCALES - scale + 1)) + 1;
        let k = vif_kernel(n);
        if scale > 1 {
            r = r.filter_valid(&k).decimate();
            d = d.filter_valid(&k).decimate();
        }
        let mu1 = r.filter_valid(&k);
        if mu1.v.is_empty() {
            break;
        }
        let mu2 = d.filter_valid(&k);
        let s11 = r.zip(&r, |a, b| a * b).filter_valid(&k);
        let s22 = d.zip(&d, |a, b| a * b).filter_valid(&k);
        let s12 = r.zip(&d, |a, b| a * b).filter_valid(&k);
        for i in 0..mu1.v.len() {
            let mut var1 = (s11.v[i] - mu1.v[i] * mu1.v[i]).max(0.0);
            let var2 = (s22.v[i] - mu2.v[i] * mu2.v[i]).max(0.0);
            let cov = s12.v[i] - mu1.v[i] * mu2.v[i];
            let mut g = cov / (var1 + VIF_TINY);
            let mut sv = var2 - g * cov;
            if var1 < VIF_TINY {
                g = 0.0;
                sv = var2;
                var1 = 0.0;
            }
            if var2 < VIF_TINY {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = var2;
                g = 0.0;
            }
            sv = sv.max(VIF_TINY);
            num += (1.0 + g * g * var1 / (sv + VIF_NOISE_VAR)).log10();
            den += (1.0 + var1 / VIF_NOISE_VAR).log10();
        }
    }
    if den == 0.0 {
        return Ok(if reference.max_abs_diff(dist) == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}
