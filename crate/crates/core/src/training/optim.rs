//! Optimizers and the guarded update step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Real> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub adam: AdamParams,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    /// Register every parameter of `store` as trainable. Frozen parameters
    /// are rejected.
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore<T>) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {learning_rate} must be positive")));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.frozen) {
            return Err(Error::FrozenParameter(p.name.clone()));
        }
        let zeros: Vec<_> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Ok(Self {
            kind,
            learning_rate,
            adam: AdamParams::default(),
            step: 0,
            second: if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            first: if kind == OptimizerKind::Adam { zeros } else { Vec::new() },
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Apply one update from per-parameter gradients (store order, `None` for
/// parameters without a gradient). Any non-finite gradient aborts the step
/// before a single weight changes.
pub fn gradient_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    opt: &mut Optimizer<T>,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), store.len())));
    }
    for ((_, p), g) in store.iter().zip(grads) {
        if let Some(g) = g {
            if p.frozen {
                return Err(Error::FrozenParameter(p.name.clone()));
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!("gradient of `{}` is {:?}", p.name, g.shape())));
            }
            if !g.all_finite() {
                log::error!("non-finite gradient for `{}`; step aborted", p.name);
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
    }
    opt.step += 1;
    let lr = opt.learning_rate;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    match opt.kind {
        OptimizerKind::Sgd => {
            let neg_lr = T::from_f64c(-lr);
            for (id, g) in ids.into_iter().zip(grads) {
                if let Some(g) = g {
                    let w = store.tensor_mut(id);
                    for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
                        *wv = *wv + neg_lr * gv;
                    }
                }
            }
        }
        OptimizerKind::Adam => {
            let AdamParams { beta1, beta2, eps } = opt.adam;
            let t = opt.step as i32;
            let step_size = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
            let (b1, b2) = (T::from_f64c(beta1), T::from_f64c(beta2));
            let (c1, c2) = (T::from_f64c(1.0 - beta1), T::from_f64c(1.0 - beta2));
            let (step_size, eps) = (T::from_f64c(step_size), T::from_f64c(eps));
            for (i, (id, g)) in ids.into_iter().zip(grads).enumerate() {
                let Some(g) = g else { continue };
                let m = opt.first[i].data_mut();
                let v = opt.second[i].data_mut();
                let w = store.tensor_mut(id).data_mut();
                for j in 0..w.len() {
                    let gj = g.data()[j];
                    m[j] = b1 * m[j] + c1 * gj;
                    v[j] = b2 * v[j] + c2 * gj * gj;
                    w[j] = w[j] - step_size * m[j] / (v[j].sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
