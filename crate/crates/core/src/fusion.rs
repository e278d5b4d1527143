//! Feature- and pixel-merging rules.
//!
//! Fixed criteria (maximum, sum, weighted average) are special cases of the
//! learned per-pixel weighting `f = W1 * I1 + W2 * I2`: indicator maps select
//! the maximum, unit maps sum, and constant 0.5 maps average.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Default epsilon of weight-map normalization.
pub const DEFAULT_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    /// Learned weight maps; features are concatenated before the late layers.
    Nonlinear,
    Maximum,
    Sum,
    WeightedAverage,
    Concat,
    /// Weighted average of each feature stream, then concatenation of streams.
    Hybrid,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 6] = [
        CriterionKind::Nonlinear,
        CriterionKind::Maximum,
        CriterionKind::Sum,
        CriterionKind::WeightedAverage,
        CriterionKind::Concat,
        CriterionKind::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionKind::Nonlinear => "nonlinear",
            CriterionKind::Maximum => "maximum",
            CriterionKind::Sum => "sum",
            CriterionKind::WeightedAverage => "weighted_average",
            CriterionKind::Concat => "concat",
            CriterionKind::Hybrid => "hybrid",
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CriterionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion criterion `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionCriterion {
    pub kind: CriterionKind,
    /// Weight of the first source under weighted averaging.
    pub fixed_weight: f64,
}

impl Default for FusionCriterion {
    fn default() -> Self {
        Self { kind: CriterionKind::Nonlinear, fixed_weight: 0.5 }
    }
}

impl fmt::Display for FusionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CriterionKind::WeightedAverage | CriterionKind::Hybrid => {
                write!(f, "{}:{}", self.kind.as_str(), self.fixed_weight)
            }
            _ => f.write_str(self.kind.as_str()),
        }
    }
}

impl FromStr for FusionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, weight) = match s.split_once(':') {
            Some((k, w)) => (k, w.parse::<f64>().map_err(|e| Error::invalid(format!("criterion weight: {e}")))?),
            None => (s, 0.5),
        };
        let c = FusionCriterion { kind: kind.parse()?, fixed_weight: weight };
        c.validate()?;
        Ok(c)
    }
}

impl FusionCriterion {
    pub fn new(kind: CriterionKind) -> Self {
        Self { kind, fixed_weight: 0.5 }
    }

    pub fn weighted(kind: CriterionKind, fixed_weight: f64) -> Result<Self> {
        let c = Self { kind, fixed_weight };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fixed_weight) {
            return Err(Error::invalid(format!("fixed weight {} outside [0, 1]", self.fixed_weight)));
        }
        Ok(())
    }

    /// Input width of the late layers for a backbone of `width` channels
    /// whose branches each expose a shallow and a deep stream.
    pub fn merged_width(&self, width: usize) -> usize {
        match self.kind {
            CriterionKind::Nonlinear | CriterionKind::Concat => 4 * width,
            CriterionKind::Hybrid => 2 * width,
            CriterionKind::Maximum | CriterionKind::Sum | CriterionKind::WeightedAverage => width,
        }
    }

    /// Whether the late layers see both streams of each branch.
    pub fn uses_both_streams(&self) -> bool {
        matches!(self.kind, CriterionKind::Nonlinear | CriterionKind::Concat | CriterionKind::Hybrid)
    }
}

/// Merge two equally shaped feature maps.
///
/// Nonlinear fusion happens at the pixel level through weight maps, so at the
/// feature level it concatenates like `Concat`. `Hybrid` averages here; its
/// concatenation happens across streams in the caller.
pub fn merge_features<T: Real>(fa: &Var<T>, fb: &Var<T>, c: &FusionCriterion) -> Result<Var<T>> {
    if fa.shape() != fb.shape() {
        return Err(Error::shape(format!("cannot merge {:?} with {:?}", fa.shape(), fb.shape())));
    }
    match c.kind {
        CriterionKind::Maximum => fa.maximum(fb),
        CriterionKind::Sum => fa.add(fb),
        CriterionKind::WeightedAverage | CriterionKind::Hybrid => {
            fa.mul_scalar(c.fixed_weight).add(&fb.mul_scalar(1.0 - c.fixed_weight))
        }
        CriterionKind::Concat | CriterionKind::Nonlinear => Var::concat(&[fa.clone(), fb.clone()]),
    }
}

/// Per-pixel weight maps, one per source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeightMaps {
    pub width: usize,
    pub height: usize,
    pub maps: Vec<Vec<f64>>,
}

impl FusionWeightMaps {
    pub fn new(width: usize, height: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        for m in &maps {
            if m.len() != width * height {
                return Err(Error::shape(format!("weight map of {} values for {width}x{height}", m.len())));
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("weight maps must be finite and nonnegative"));
            }
        }
        Ok(Self { width, height, maps })
    }

    pub fn constant(width: usize, height: usize, weights: &[f64]) -> Result<Self> {
        Self::new(width, height, weights.iter().map(|&w| vec![w; width * height]).collect())
    }

    /// Per-pixel sum of the maps.
    pub fn pixel_sums(&self) -> Vec<f64> {
        (0..self.width * self.height).map(|i| self.maps.iter().map(|m| m[i]).sum()).collect()
    }

    pub fn as_images(&self) -> Result<Vec<Image>> {
        self.maps.iter().map(|m| Image::from_clipped(self.width, self.height, m.clone())).collect()
    }
}

/// `W_i <- W_i / (sum_j W_j + eps)` per pixel.
pub fn normalize_weight_maps(raw: &FusionWeightMaps, eps: f64) -> FusionWeightMaps {
    let sums = raw.pixel_sums();
    let maps = raw
        .maps
        .iter()
        .map(|m| m.iter().zip(&sums).map(|(w, s)| w / (s + eps)).collect())
        .collect();
    FusionWeightMaps { width: raw.width, height: raw.height, maps }
}

/// Unclipped weighted combination of two sources.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPixels {
    pub width: usize,
    pub height: usize,
    pub raw: Vec<f64>,
}

impl FusedPixels {
    /// Clip into `[0, 1]` for export.
    pub fn to_image(&self) -> Result<Image> {
        Image::from_clipped(self.width, self.height, self.raw.clone())
    }
}

/// `f = sum_i W_i * I_i` over exactly two sources.
pub fn nonlinear_fuse(images: &[&Image], maps: &FusionWeightMaps) -> Result<FusedPixels> {
    if images.len() != 2 || maps.maps.len() != 2 {
        return Err(Error::invalid(format!(
            "nonlinear fusion takes two sources and two maps, got {} and {}",
            images.len(),
            maps.maps.len()
        )));
    }
    for img in images {
        if img.dims() != (maps.width, maps.height) {
            return Err(Error::shape(format!("source {:?} vs maps {}x{}", img.dims(), maps.width, maps.height)));
        }
    }
    let raw = (0..maps.width * maps.height)
        .map(|i| maps.maps[0][i] * images[0].pixels()[i] + maps.maps[1][i] * images[1].pixels()[i])
        .collect();
    Ok(FusedPixels { width: maps.width, height: maps.height, raw })
}

/// Differentiable normalization of two weight maps.
pub fn normalize_weight_vars<T: Real>(w1: &Var<T>, w2: &Var<T>, eps: f64) -> Result<(Var<T>, Var<T>)> {
    let denom = w1.add(w2)?.add_scalar(eps);
    Ok((w1.div(&denom)?, w2.div(&denom)?))
}

/// Differentiable `W1 * I1 + W2 * I2`.
pub fn fuse_vars<T: Real>(i1: &Var<T>, i2: &Var<T>, w1: &Var<T>, w2: &Var<T>) -> Result<Var<T>> {
    w1.mul(i1)?.add(&w2.mul(i2)?)
}
