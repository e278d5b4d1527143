//! Named parameter storage, decoupled from the graph.
//!
//! Layers hold [`ParamId`]s; each forward pass binds the stored tensors to
//! fresh graph leaves, so optimizer updates never alias live graph values.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    Constant(f64),
}

impl Init {
    fn sample<T: Real>(self, shape: Shape, rng: &mut impl Rng) -> Tensor<T> {
        let bound = match self {
            Init::HeUniform { fan_in } => (6.0 / fan_in.max(1) as f64).sqrt(),
            Init::XavierUniform { fan_in, fan_out } => (6.0 / (fan_in + fan_out).max(1) as f64).sqrt(),
            Init::Constant(c) => return Tensor::full(shape, T::from_f64c(c)),
        };
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let len = shape.iter().product();
        let data = (0..len).map(|_| T::from_f64c(dist.sample(rng))).collect();
        Tensor::from_vec(shape, data).expect("init shape")
    }
}

/// Whether a bound parameter set should record gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value, frozen: false });
        ParamId(self.params.len() - 1)
    }

    pub fn init(&mut self, name: impl Into<String>, shape: Shape, init: Init, rng: &mut impl Rng) -> ParamId {
        let value = init.sample(shape, rng);
        self.insert(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn freeze_all(&mut self) {
        self.set_frozen(true);
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn is_frozen(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.frozen)
    }

    /// Copy values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(format!("{} stored tensors for {} parameters", other.len(), self.len())));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` {:?} does not match stored `{}` {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), frozen: p.frozen })
                .collect(),
        }
    }

    /// Create graph leaves for every parameter. Frozen parameters, and all
    /// parameters in [`Mode::Eval`], become constants.
    pub fn bind(&self, mode: Mode) -> Bound<T> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if mode == Mode::Train && !p.frozen {
                    Var::param(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound into one forward pass.
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    /// Collect per-parameter gradients, in store order. Parameters that did
    /// not participate get `None`.
    pub fn gradients(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| grads.take(v)).collect()
    }
}
