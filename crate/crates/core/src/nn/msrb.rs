//! Multi-scale residual block.

use rand::Rng;

use super::conv::{Conv2d, ConvSpec};
use super::params::{Bound, ParamStore};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

const SCALES: [usize; 3] = [1, 3, 5];

/// Two stages of parallel 1/3/5 convolutions (each stage concatenated to
/// three times the width), a 1x1 fusing convolution, and a residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct Msrb {
    pub width: usize,
    pub stage1: [Conv2d; 3],
    pub stage2: [Conv2d; 3],
    pub fuse: Conv2d,
}

impl Msrb {
    /// Layers are named `c12`..`c18` under `name`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, width: usize, bias: bool) -> Result<Self> {
        let mut conv = |idx: usize, k: usize, cin: usize| {
            Conv2d::new(store, rng, &format!("{name}.c{idx}"), ConvSpec::new(k, cin, width, Activation::Relu), bias)
        };
        let stage1 = [conv(12, SCALES[0], width)?, conv(13, SCALES[1], width)?, conv(14, SCALES[2], width)?];
        let stage2 = [conv(15, SCALES[0], 3 * width)?, conv(16, SCALES[1], 3 * width)?, conv(17, SCALES[2], 3 * width)?];
        let fuse = conv(18, 1, 3 * width)?;
        Ok(Self { width, stage1, stage2, fuse })
    }

    pub fn layers(&self) -> Vec<&Conv2d> {
        self.stage1.iter().chain(&self.stage2).chain(std::iter::once(&self.fuse)).collect()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape()[1] != self.width {
            return Err(Error::shape(format!("MSRB expects {} channels, got {:?}", self.width, x.shape())));
        }
        let s1 = self.stage1.iter().map(|c| c.forward(p, x)).collect::<Result<Vec<_>>>()?;
        let s1 = Var::concat(&s1)?;
        let s2 = self.stage2.iter().map(|c| c.forward(p, &s1)).collect::<Result<Vec<_>>>()?;
        let s2 = Var::concat(&s2)?;
        self.fuse.forward(p, &s2)?.add(x)
    }
}
