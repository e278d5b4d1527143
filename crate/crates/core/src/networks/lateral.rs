//! Lateral connections from frozen subtask networks.
//!
//! A receiving layer of task `l` computes
//! `act(W_l x_l + sum_{j<l} W_j x_j)`, where each `W_j x_j` is the
//! pre-activation of the corresponding frozen layer of an earlier task.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d};
use crate::tensor::Real;

/// Task order used by lateral connections: sources must precede receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskIndex {
    Reconstruction = 0,
    MultiFocus = 1,
    Fusion = 2,
}

/// Which frozen subtasks feed the fusion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LateralConfig {
    /// Reconstruction encoder (through DC1) into C2/C3.
    pub from_subtask1: bool,
    /// Multi-focus backbone C4/C5/C8/C9 into the same main-task layers.
    pub from_subtask2: bool,
}

impl Default for LateralConfig {
    fn default() -> Self {
        Self { from_subtask1: true, from_subtask2: true }
    }
}

impl LateralConfig {
    pub const NONE: LateralConfig = LateralConfig { from_subtask1: false, from_subtask2: false };

    pub fn label(&self) -> &'static str {
        match (self.from_subtask1, self.from_subtask2) {
            (false, false) => "main_only",
            (true, false) => "main+subtask1",
            (false, true) => "main+subtask2",
            (true, true) => "full",
        }
    }
}

/// One summand `W_j x_j` of a lateral layer.
pub struct LateralInput<'a, T: Real> {
    pub source: TaskIndex,
    pub conv: &'a Conv2d,
    pub params: &'a Bound<T>,
    pub input: Var<T>,
}

/// `act(own(x) + sum_j W_j x_j)` for a layer of task `task`.
pub fn forward_with_laterals<T: Real>(
    task: TaskIndex,
    own: &Conv2d,
    own_params: &Bound<T>,
    x: &Var<T>,
    laterals: &[LateralInput<'_, T>],
) -> Result<Var<T>> {
    if laterals.is_empty() {
        return own.forward(own_params, x);
    }
    let mut acc = own.preactivation(own_params, x)?;
    for lat in laterals {
        if lat.source >= task {
            return Err(Error::invalid(format!("lateral from {:?} into {:?} must come from an earlier task", lat.source, task)));
        }
        let term = lat.conv.preactivation(lat.params, &lat.input)?;
        if term.shape() != acc.shape() {
            return Err(Error::shape(format!(
                "lateral {} gives {:?}, {} gives {:?}",
                lat.conv.name,
                term.shape(),
                own.name,
                acc.shape()
            )));
        }
        acc = acc.add(&term)?;
    }
    Ok(match own.spec.activation {
        crate::autograd::Activation::Relu => acc.relu(),
        crate::autograd::Activation::Sigmoid => acc.sigmoid(),
        crate::autograd::Activation::None => acc,
    })
}
