//! Siamese fusion backbone shared by the main task and the multi-focus subtask.

use rand::Rng;

use super::lateral::{forward_with_laterals, LateralInput, TaskIndex};
use super::recon::ReconNet;
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::fusion::{fuse_vars, merge_features, normalize_weight_vars, FusionCriterion};
use crate::nn::{Bound, ChannelAttention, Conv2d, ConvSpec, Init, Msrb, ParamStore};
use crate::tensor::Real;

/// Initial bias of the weight heads, so both maps start mostly active.
pub const HEAD_BIAS_INIT: f64 = 0.5;

/// One source branch: input conv, second conv, MSRB, channel attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub input: Conv2d,
    pub mid: Conv2d,
    pub msrb: Msrb,
    pub attention: ChannelAttention,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        input_name: &str,
        mid_name: &str,
        suffix: &str,
        width: usize,
        ratio: usize,
        bias: bool,
    ) -> Result<Self> {
        Ok(Self {
            input: Conv2d::new(store, rng, input_name, ConvSpec::new(3, 1, width, Activation::Relu), bias)?,
            mid: Conv2d::new(store, rng, mid_name, ConvSpec::new(3, width, width, Activation::Relu), bias)?,
            msrb: Msrb::new(store, rng, &format!("msrb_{suffix}"), width, bias)?,
            attention: ChannelAttention::new(store, rng, &format!("cam_{suffix}"), width, ratio)?,
        })
    }

    pub fn layers(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.input, &self.mid];
        v.extend(self.msrb.layers());
        v.push(&self.attention.reduce);
        v.push(&self.attention.expand);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSettings {
    pub width: usize,
    pub attention_ratio: usize,
    pub bias: bool,
    pub share_branches: bool,
    pub normalize_weights: bool,
    pub norm_eps: f64,
    pub criterion: FusionCriterion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub settings: FusionSettings,
    pub branch_a: Branch,
    pub branch_b: Branch,
    pub c6: Conv2d,
    pub c7: Conv2d,
    pub c8: Conv2d,
    pub c9: Conv2d,
    pub c10: Conv2d,
    pub c11: Conv2d,
}

/// Constant lateral summands for one forward pass.
#[derive(Default)]
pub struct LateralSet<'a, T: Real> {
    pub c2: Vec<LateralInput<'a, T>>,
    pub c3: Vec<LateralInput<'a, T>>,
    pub c4: Vec<LateralInput<'a, T>>,
    pub c5: Vec<LateralInput<'a, T>>,
    pub c8: Vec<LateralInput<'a, T>>,
    pub c9: Vec<LateralInput<'a, T>>,
}

impl<'a, T: Real> LateralSet<'a, T> {
    pub fn empty() -> Self {
        Self { c2: vec![], c3: vec![], c4: vec![], c5: vec![], c8: vec![], c9: vec![] }
    }
}

/// Inputs seen by the lateral-receiving layers, kept so a frozen copy of
/// this network can act as a lateral source.
pub struct LayerInputs<T: Real> {
    pub c4: Var<T>,
    pub c5: Var<T>,
    pub c8: Var<T>,
    pub c9: Var<T>,
}

pub struct FusionForward<T: Real> {
    /// Unclipped `W1 * a + W2 * b`.
    pub fused: Var<T>,
    /// Weight maps as used for fusion (normalized when enabled).
    pub w1: Var<T>,
    pub w2: Var<T>,
    /// Raw head outputs before normalization.
    pub raw_w1: Var<T>,
    pub raw_w2: Var<T>,
    pub inputs: LayerInputs<T>,
}

impl FusionNet {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, settings: FusionSettings) -> Result<Self> {
        settings.criterion.validate()?;
        let FusionSettings { width: w, attention_ratio: r, bias, .. } = settings;
        if w == 0 {
            return Err(Error::invalid("backbone width must be positive"));
        }
        let branch_a = Branch::new(store, rng, "c2", "c4", "a", w, r, bias)?;
        let branch_b =
            if settings.share_branches { branch_a.clone() } else { Branch::new(store, rng, "c3", "c5", "b", w, r, bias)? };
        let merged = settings.criterion.merged_width(w);
        let relu = |k, cin, cout| ConvSpec::new(k, cin, cout, Activation::Relu);
        let c6 = Conv2d::new(store, rng, "c6", relu(3, merged, w), bias)?;
        let c7 = Conv2d::new(store, rng, "c7", relu(3, merged, w), bias)?;
        let c8 = Conv2d::new(store, rng, "c8", relu(3, w, w), bias)?;
        let c9 = Conv2d::new(store, rng, "c9", relu(3, w, w), bias)?;
        let head = relu(3, 4 * w, 1);
        let head_init = Init::HeUniform { fan_in: head.fan_in() };
        let c10 = Conv2d::with_init(store, rng, "c10", head, true, head_init, HEAD_BIAS_INIT)?;
        let c11 = Conv2d::with_init(store, rng, "c11", head, true, head_init, HEAD_BIAS_INIT)?;
        Ok(Self { settings, branch_a, branch_b, c6, c7, c8, c9, c10, c11 })
    }

    /// Layers in table order (C2..C11 then per-branch MSRB and attention).
    pub fn layers(&self) -> Vec<&Conv2d> {
        let mut v = vec![
            &self.branch_a.input,
            &self.branch_b.input,
            &self.branch_a.mid,
            &self.branch_b.mid,
            &self.c6,
            &self.c7,
            &self.c8,
            &self.c9,
            &self.c10,
            &self.c11,
        ];
        v.extend(self.branch_a.msrb.layers());
        v.extend([&self.branch_a.attention.reduce, &self.branch_a.attention.expand]);
        if !self.settings.share_branches {
            v.extend(self.branch_b.msrb.layers());
            v.extend([&self.branch_b.attention.reduce, &self.branch_b.attention.expand]);
        }
        v
    }

    fn merge<T: Real>(&self, shallow: [&Var<T>; 2], deep: [&Var<T>; 2]) -> Result<Var<T>> {
        let c = &self.settings.criterion;
        if c.uses_both_streams() {
            let fa = Var::concat(&[shallow[0].clone(), deep[0].clone()])?;
            let fb = Var::concat(&[shallow[1].clone(), deep[1].clone()])?;
            merge_features(&fa, &fb, c)
        } else {
            merge_features(deep[0], deep[1], c)
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &Bound<T>,
        a: &Var<T>,
        b: &Var<T>,
        laterals: &LateralSet<'_, T>,
    ) -> Result<FusionForward<T>> {
        if a.shape() != b.shape() || a.shape()[1] != 1 {
            return Err(Error::shape(format!("sources must be equal single-channel maps: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let task = TaskIndex::Fusion;
        let h_a = forward_with_laterals(task, &self.branch_a.input, p, a, &laterals.c2)?;
        let h_b = forward_with_laterals(task, &self.branch_b.input, p, b, &laterals.c3)?;
        let m_a = forward_with_laterals(task, &self.branch_a.mid, p, &h_a, &laterals.c4)?;
        let m_b = forward_with_laterals(task, &self.branch_b.mid, p, &h_b, &laterals.c5)?;
        let d_a = self.branch_a.attention.forward(p, &self.branch_a.msrb.forward(p, &m_a)?)?;
        let d_b = self.branch_b.attention.forward(p, &self.branch_b.msrb.forward(p, &m_b)?)?;

        let merged = self.merge([&m_a, &m_b], [&d_a, &d_b])?;
        let x6 = self.c6.forward(p, &merged)?;
        let x7 = self.c7.forward(p, &merged)?;
        let x8 = forward_with_laterals(task, &self.c8, p, &x6, &laterals.c8)?;
        let x9 = forward_with_laterals(task, &self.c9, p, &x7, &laterals.c9)?;
        let late = Var::concat(&[x6.clone(), x7.clone(), x8, x9])?;
        let raw_w1 = self.c10.forward(p, &late)?;
        let raw_w2 = self.c11.forward(p, &late)?;
        let (w1, w2) = if self.settings.normalize_weights {
            normalize_weight_vars(&raw_w1, &raw_w2, self.settings.norm_eps)?
        } else {
            (raw_w1.clone(), raw_w2.clone())
        };
        let fused = fuse_vars(a, b, &w1, &w2)?;
        Ok(FusionForward { fused, w1, w2, raw_w1, raw_w2, inputs: LayerInputs { c4: h_a, c5: h_b, c8: x6, c9: x7 } })
    }
}

/// Frozen subtask networks bound for inference, used as lateral sources.
pub struct Auxiliary<T: Real> {
    pub recon: Option<(ReconNet, Bound<T>)>,
    pub multifocus: Option<(FusionNet, Bound<T>)>,
}

/// Precomputed subtask activations for one pair of sources.
pub struct AuxiliaryActivations<T: Real> {
    recon: Option<(Var<T>, Var<T>)>,
    multifocus: Option<LayerInputs<T>>,
}

impl<T: Real> Auxiliary<T> {
    pub fn none() -> Self {
        Self { recon: None, multifocus: None }
    }

    pub fn activations(&self, a: &Var<T>, b: &Var<T>) -> Result<AuxiliaryActivations<T>> {
        let a = a.detach();
        let b = b.detach();
        let recon = match &self.recon {
            Some((net, p)) => Some((net.encode(p, &a)?.features, net.encode(p, &b)?.features)),
            None => None,
        };
        let multifocus = match &self.multifocus {
            Some((net, p)) => Some(net.forward(p, &a, &b, &LateralSet::empty())?.inputs),
            None => None,
        };
        Ok(AuxiliaryActivations { recon, multifocus })
    }

    /// Bind precomputed activations to the frozen layers that consume them.
    pub fn lateral_set<'a>(&'a self, acts: &AuxiliaryActivations<T>) -> LateralSet<'a, T> {
        let mut set = LateralSet::empty();
        if let (Some((net, p)), Some((ea, eb))) = (&self.recon, &acts.recon) {
            let src = TaskIndex::Reconstruction;
            set.c2.push(LateralInput { source: src, conv: net.dc1(), params: p, input: ea.clone() });
            set.c3.push(LateralInput { source: src, conv: net.dc1(), params: p, input: eb.clone() });
        }
        if let (Some((net, p)), Some(inp)) = (&self.multifocus, &acts.multifocus) {
            let src = TaskIndex::MultiFocus;
            set.c4.push(LateralInput { source: src, conv: &net.branch_a.mid, params: p, input: inp.c4.clone() });
            set.c5.push(LateralInput { source: src, conv: &net.branch_b.mid, params: p, input: inp.c5.clone() });
            set.c8.push(LateralInput { source: src, conv: &net.c8, params: p, input: inp.c8.clone() });
            set.c9.push(LateralInput { source: src, conv: &net.c9, params: p, input: inp.c9.clone() });
        }
        set
    }
}
