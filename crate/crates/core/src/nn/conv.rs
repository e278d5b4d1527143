use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// One row of a layer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self { kernel, in_channels, out_channels, stride: 1, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }
}

/// Same-padded convolution followed by `spec.activation`.
pub fn conv2d<T: Real>(x: &Var<T>, spec: &ConvSpec, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    conv2d_act(x, spec, weight, bias, spec.activation)
}

fn conv2d_act<T: Real>(
    x: &Var<T>,
    spec: &ConvSpec,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    act: Activation,
) -> Result<Var<T>> {
    if x.shape()[1] != spec.in_channels {
        return Err(Error::shape(format!(
            "expected {} input channels, got {:?}",
            spec.in_channels,
            x.shape()
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(format!("kernel {:?} does not match {:?}", weight.shape(), spec)));
    }
    x.conv2d(weight, bias, spec.stride, spec.kernel / 2, act)
}

/// A convolution layer whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        let init = match spec.activation {
            Activation::Relu => Init::HeUniform { fan_in: spec.fan_in() },
            Activation::Sigmoid | Activation::None => {
                Init::XavierUniform { fan_in: spec.fan_in(), fan_out: spec.fan_out() }
            }
        };
        Self::with_init(store, rng, name, spec, bias, init, 0.0)
    }

    pub fn with_init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        spec: ConvSpec,
        bias: bool,
        init: Init,
        bias_init: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = store.init(format!("{name}.weight"), spec.weight_shape(), init, rng);
        let bias = bias.then(|| store.init(format!("{name}.bias"), [1, spec.out_channels, 1, 1], Init::Constant(bias_init), rng));
        Ok(Self { name: name.to_string(), spec, weight, bias })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        conv2d(x, &self.spec, p.var(self.weight), self.bias.map(|b| p.var(b)))
    }

    /// The affine part only, before the activation.
    pub fn preactivation<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        conv2d_act(x, &self.spec, p.var(self.weight), self.bias.map(|b| p.var(b)), Activation::None)
    }
}
