//! Reconstruction subtask: dense encoder + decoder.

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Bound, Conv2d, DenseDecoder, DenseEncoder, Encoded, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconNet {
    pub encoder: DenseEncoder,
    pub decoder: DenseDecoder,
}

impl ReconNet {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, bias: bool) -> Result<Self> {
        Ok(Self { encoder: DenseEncoder::new(store, rng, bias)?, decoder: DenseDecoder::new(store, rng, bias)? })
    }

    pub fn layers(&self) -> Vec<&Conv2d> {
        self.encoder.layers().into_iter().chain(self.decoder.layers.iter()).collect()
    }

    pub fn encode<T: Real>(&self, p: &Bound<T>, img: &Var<T>) -> Result<Encoded<T>> {
        self.encoder.forward(p, img)
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, img: &Var<T>) -> Result<Var<T>> {
        let enc = self.encoder.forward(p, img)?;
        self.decoder.forward(p, &enc.features)
    }

    /// First decoder layer, the lateral source into the fusion input stage.
    pub fn dc1(&self) -> &Conv2d {
        &self.decoder.layers[0]
    }
}
