//! Squeeze-and-excitation style channel gating.

use rand::Rng;

use super::conv::{Conv2d, ConvSpec};
use super::params::{Bound, ParamStore};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Pooled features pass through a reducing 1x1 conv with relu and an
/// expanding 1x1 conv with sigmoid; the result gates each channel of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub channels: usize,
    pub reduction_ratio: usize,
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        reduction_ratio: usize,
    ) -> Result<Self> {
        if reduction_ratio == 0 || !channels.is_multiple_of(reduction_ratio) {
            return Err(Error::invalid(format!(
                "{channels} channels are not divisible by reduction ratio {reduction_ratio}"
            )));
        }
        let hidden = channels / reduction_ratio;
        let reduce = Conv2d::new(store, rng, &format!("{name}.w1"), ConvSpec::new(1, channels, hidden, Activation::Relu), true)?;
        let expand = Conv2d::new(store, rng, &format!("{name}.w2"), ConvSpec::new(1, hidden, channels, Activation::Sigmoid), true)?;
        Ok(Self { channels, reduction_ratio, reduce, expand })
    }

    /// Per-(sample, channel) gates in `(0, 1)`.
    pub fn gates<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let pooled = x.global_avg_pool();
        let hidden = self.reduce.forward(p, &pooled)?;
        self.expand.forward(p, &hidden)
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let gates = self.gates(p, x)?;
        x.scale_channels(&gates)
    }
}
