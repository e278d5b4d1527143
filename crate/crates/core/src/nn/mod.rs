//! Differentiable building blocks.

pub mod attention;
pub mod conv;
pub mod dense;
pub mod msrb;
pub mod params;

pub use attention::ChannelAttention;
pub use conv::{conv2d, Conv2d, ConvSpec};
pub use dense::{DenseDecoder, DenseEncoder, Encoded, ENCODED_CHANNELS, GROWTH};
pub use msrb::Msrb;
pub use params::{Bound, Init, Mode, Param, ParamId, ParamStore};

use crate::autograd::Var;
use crate::tensor::{Real, Tensor};

/// Per-(sample, channel) spatial means.
pub fn global_average_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Var::constant(x.clone()).global_avg_pool().value().clone()
}
