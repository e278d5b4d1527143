//! Densely connected encoder and plain decoder of the reconstruction network.

use rand::Rng;

use super::conv::{Conv2d, ConvSpec};
use super::params::{Bound, ParamStore};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const GROWTH: usize = 16;
pub const ENCODED_CHANNELS: usize = 4 * GROWTH;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseEncoder {
    pub c1: Conv2d,
    pub blocks: [Conv2d; 3],
}

/// Encoder output together with the dense-block activations.
pub struct Encoded<T: Real> {
    pub features: Var<T>,
    /// Outputs of EC1, EC2, EC3.
    pub taps: [Var<T>; 3],
}

impl DenseEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, bias: bool) -> Result<Self> {
        let c1 = Conv2d::new(store, rng, "c1", ConvSpec::new(3, 1, GROWTH, Activation::Relu), bias)?;
        let mut block = |i: usize| {
            Conv2d::new(store, rng, &format!("ec{i}"), ConvSpec::new(3, i * GROWTH, GROWTH, Activation::Relu), bias)
        };
        let blocks = [block(1)?, block(2)?, block(3)?];
        let enc = Self { c1, blocks };
        enc.audit()?;
        Ok(enc)
    }

    fn audit(&self) -> Result<()> {
        let mut width = self.c1.spec.out_channels;
        for b in &self.blocks {
            if b.spec.in_channels != width {
                return Err(Error::shape(format!("{} consumes {} channels, dense input is {}", b.name, b.spec.in_channels, width)));
            }
            width += b.spec.out_channels;
        }
        if width != ENCODED_CHANNELS {
            return Err(Error::shape(format!("encoder emits {width} channels")));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<&Conv2d> {
        std::iter::once(&self.c1).chain(&self.blocks).collect()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, img: &Var<T>) -> Result<Encoded<T>> {
        if img.shape()[1] != 1 {
            return Err(Error::shape(format!("encoder expects a single-channel image, got {:?}", img.shape())));
        }
        let mut outs = vec![self.c1.forward(p, img)?];
        for b in &self.blocks {
            let input = Var::concat(&outs)?;
            outs.push(b.forward(p, &input)?);
        }
        let features = Var::concat(&outs)?;
        Ok(Encoded { features, taps: [outs[1].clone(), outs[2].clone(), outs[3].clone()] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseDecoder {
    pub layers: [Conv2d; 4],
}

impl DenseDecoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, bias: bool) -> Result<Self> {
        let widths = [ENCODED_CHANNELS, 64, 32, 16, 1];
        let mut layers = Vec::with_capacity(4);
        for i in 0..4 {
            layers.push(Conv2d::new(
                store,
                rng,
                &format!("dc{}", i + 1),
                ConvSpec::new(3, widths[i], widths[i + 1], Activation::Relu),
                bias,
            )?);
        }
        Ok(Self { layers: layers.try_into().expect("four decoder layers") })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, features: &Var<T>) -> Result<Var<T>> {
        if features.shape()[1] != ENCODED_CHANNELS {
            return Err(Error::shape(format!("decoder expects {ENCODED_CHANNELS} channels, got {:?}", features.shape())));
        }
        let mut h = features.clone();
        for l in &self.layers {
            h = l.forward(p, &h)?;
        }
        Ok(h)
    }
}
