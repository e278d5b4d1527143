//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Var`] is a reference-counted graph node. Nodes that depend on no
//! trainable leaf drop their parents immediately, so inference holds only the
//! activations still referenced by the caller.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::tensor::{Real, Shape, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Pointwise nonlinearity fused into a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "Relu",
            Activation::Sigmoid => "Sigmoid",
            Activation::None => "None",
        }
    }
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

enum Op<T: Real> {
    Leaf,
    Conv { x: Var<T>, w: Var<T>, b: Option<Var<T>>, geom: ConvGeometry, act: Activation },
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Div(Var<T>, Var<T>),
    Maximum(Var<T>, Var<T>),
    AddScalar(Var<T>),
    MulScalar(Var<T>, T),
    Relu(Var<T>),
    Sigmoid(Var<T>),
    Ln(Var<T>),
    Square(Var<T>),
    ClampMin(Var<T>, T),
    Concat(Vec<Var<T>>),
    GlobalAvgPool(Var<T>),
    ScaleChannels(Var<T>, Var<T>),
    Mean(Var<T>),
    MeanPerSample(Var<T>),
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b.iter());
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Maximum(a, b) => vec![a, b],
            Op::ScaleChannels(x, g) => vec![x, g],
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::ClampMin(a, _)
            | Op::GlobalAvgPool(a)
            | Op::Mean(a)
            | Op::MeanPerSample(a) => vec![a],
            Op::Concat(parts) => parts.iter().collect(),
        }
    }
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// A value in the computation graph.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

fn same_shape<T: Real>(what: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Var<T> {
    fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, op }))
    }

    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, op: Op::Leaf }))
    }

    /// A leaf that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(Tensor::scalar(value))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> T {
        self.0.value.data()[0]
    }

    pub fn conv2d(&self, w: &Var<T>, b: Option<&Var<T>>, stride: usize, pad: usize, act: Activation) -> Result<Self> {
        let [_, cin, h, wd] = self.shape();
        let [cout, wcin, kh, kw] = w.shape();
        if wcin != cin || kh != kw {
            return Err(Error::shape(format!("conv input {:?} vs kernel {:?}", self.shape(), w.shape())));
        }
        if let Some(b) = b {
            if b.shape() != [1, cout, 1, 1] {
                return Err(Error::shape(format!("bias {:?} for {} output channels", b.shape(), cout)));
            }
        }
        let geom = ConvGeometry::new(cin, cout, kh, stride, pad, h, wd)
            .ok_or_else(|| Error::shape(format!("kernel {kh} stride {stride} does not fit {h}x{wd}")))?;
        let mut y = conv2d_forward(&geom, self.value(), w.value(), b.map(|b| b.value()));
        match act {
            Activation::Relu => y.data_mut().iter_mut().for_each(|v| *v = relu(*v)),
            Activation::Sigmoid => y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::None => {}
        }
        Ok(Self::from_op(y, Op::Conv { x: self.clone(), w: w.clone(), b: b.cloned(), geom, act }))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Self> {
        same_shape("add", self, other)?;
        Ok(Self::from_op(self.value().zip_map(other.value(), |a, b| a + b), Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Self> {
        same_shape("sub", self, other)?;
        Ok(Self::from_op(self.value().zip_map(other.value(), |a, b| a - b), Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Self> {
        same_shape("mul", self, other)?;
        Ok(Self::from_op(self.value().zip_map(other.value(), |a, b| a * b), Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Self> {
        same_shape("div", self, other)?;
        Ok(Self::from_op(self.value().zip_map(other.value(), |a, b| a / b), Op::Div(self.clone(), other.clone())))
    }

    /// Elementwise maximum; ties resolve to `self`.
    pub fn maximum(&self, other: &Var<T>) -> Result<Self> {
        same_shape("maximum", self, other)?;
        Ok(Self::from_op(
            self.value().zip_map(other.value(), |a, b| if b > a { b } else { a }),
            Op::Maximum(self.clone(), other.clone()),
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        let c = T::from_f64c(c);
        Self::from_op(self.value().map(|v| v + c), Op::AddScalar(self.clone()))
    }

    pub fn mul_scalar(&self, c: f64) -> Self {
        let c = T::from_f64c(c);
        Self::from_op(self.value().map(|v| v * c), Op::MulScalar(self.clone(), c))
    }

    pub fn relu(&self) -> Self {
        Self::from_op(self.value().map(relu), Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Self {
        Self::from_op(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn ln(&self) -> Self {
        Self::from_op(self.value().map(|v| v.ln()), Op::Ln(self.clone()))
    }

    pub fn square(&self) -> Self {
        Self::from_op(self.value().map(|v| v * v), Op::Square(self.clone()))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Self {
        let f = T::from_f64c(floor);
        Self::from_op(self.value().map(|v| if v < f { f } else { v }), Op::ClampMin(self.clone(), f))
    }

    /// Concatenate along the channel axis.
    pub fn concat(parts: &[Var<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let [n, _, h, w] = first.shape();
        for p in parts {
            let [pn, _, ph, pw] = p.shape();
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!("concat {:?} with {:?}", first.shape(), p.shape())));
            }
        }
        let c_total: usize = parts.iter().map(|p| p.shape()[1]).sum();
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for s in 0..n {
            let dst = out.sample_mut(s);
            let mut off = 0;
            for p in parts {
                let src = p.value().sample(s);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(Self::from_op(out, Op::Concat(parts.to_vec())))
    }

    /// Per-(sample, channel) spatial mean: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn global_avg_pool(&self) -> Self {
        let [n, c, _, _] = self.shape();
        let plane = self.value().plane_len();
        let data = self
            .value()
            .data()
            .chunks(plane)
            .map(|ch| T::from_f64c(ch.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
            .collect();
        let out = Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape");
        Self::from_op(out, Op::GlobalAvgPool(self.clone()))
    }

    /// Multiply each channel plane by its `[N, C, 1, 1]` gate.
    pub fn scale_channels(&self, gate: &Var<T>) -> Result<Self> {
        let [n, c, _, _] = self.shape();
        if gate.shape() != [n, c, 1, 1] {
            return Err(Error::shape(format!("gate {:?} for features {:?}", gate.shape(), self.shape())));
        }
        let plane = self.value().plane_len();
        let mut out = self.value().clone();
        for (ch, &g) in out.data_mut().chunks_mut(plane).zip(gate.value().data()) {
            ch.iter_mut().for_each(|v| *v = *v * g);
        }
        Ok(Self::from_op(out, Op::ScaleChannels(self.clone(), gate.clone())))
    }

    /// Mean of every element, as a `[1, 1, 1, 1]` variable.
    pub fn mean(&self) -> Self {
        Self::from_op(Tensor::scalar(T::from_f64c(self.value().mean_f64())), Op::Mean(self.clone()))
    }

    /// Mean over each sample: `[N, C, H, W] -> [N, 1, 1, 1]`.
    pub fn mean_per_sample(&self) -> Self {
        let n = self.shape()[0];
        let len = self.value().sample_len();
        let data = (0..n)
            .map(|s| T::from_f64c(self.value().sample(s).iter().map(|v| v.as_f64()).sum::<f64>() / len as f64))
            .collect();
        Self::from_op(Tensor::from_vec([n, 1, 1, 1], data).expect("per-sample shape"), Op::MeanPerSample(self.clone()))
    }

    /// Gradients of this variable (seeded with ones) with respect to every
    /// trainable leaf it depends on.
    pub fn backward(&self) -> Gradients<T> {
        let mut result = Gradients { grads: HashMap::new() };
        if !self.requires_grad() {
            return result;
        }
        let order = topo_order(self);
        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), Tensor::full(self.shape(), T::one()));
        for var in order.iter().rev() {
            let Some(g) = pending.remove(&var.id()) else { continue };
            if let Op::Leaf = var.0.op {
                result.grads.insert(var.id(), g);
                continue;
            }
            propagate(var, &g, &mut pending);
        }
        result
    }
}

fn topo_order<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = vec![(root.clone(), false)];
    while let Some((var, expanded)) = stack.pop() {
        if expanded {
            order.push(var);
            continue;
        }
        if !visited.insert(var.id()) {
            continue;
        }
        stack.push((var.clone(), true));
        for p in var.0.op.parents() {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

fn accumulate<T: Real>(pending: &mut HashMap<u64, Tensor<T>>, var: &Var<T>, g: Tensor<T>) {
    if !var.requires_grad() {
        return;
    }
    match pending.get_mut(&var.id()) {
        Some(acc) => acc.add_assign(&g),
        None => {
            pending.insert(var.id(), g);
        }
    }
}

fn propagate<T: Real>(node: &Var<T>, g: &Tensor<T>, pending: &mut HashMap<u64, Tensor<T>>) {
    let out = node.value();
    match &node.0.op {
        Op::Leaf => {}
        Op::Conv { x, w, b, geom, act } => {
            let dz = match act {
                Activation::Relu => g.zip_map(out, |g, y| if y > T::zero() { g } else { T::zero() }),
                Activation::Sigmoid => g.zip_map(out, |g, y| g * y * (T::one() - y)),
                Activation::None => g.clone(),
            };
            let want_db = b.as_ref().is_some_and(|b| b.requires_grad());
            let (dx, dw, db) =
                conv2d_backward(geom, x.value(), w.value(), &dz, x.requires_grad(), w.requires_grad(), want_db);
            if let Some(dx) = dx {
                accumulate(pending, x, dx);
            }
            if let Some(dw) = dw {
                accumulate(pending, w, dw);
            }
            if let (Some(b), Some(db)) = (b, db) {
                accumulate(pending, b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(pending, a, g.clone());
            accumulate(pending, b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(pending, a, g.clone());
            accumulate(pending, b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                accumulate(pending, a, g.zip_map(b.value(), |g, bv| g * bv));
            }
            if b.requires_grad() {
                accumulate(pending, b, g.zip_map(a.value(), |g, av| g * av));
            }
        }
        Op::Div(a, b) => {
            if a.requires_grad() {
                accumulate(pending, a, g.zip_map(b.value(), |g, bv| g / bv));
            }
            if b.requires_grad() {
                // d(a/b)/db = -(a/b)/b
                let gb = g.zip_map(out, |g, q| g * q).zip_map(b.value(), |gq, bv| -gq / bv);
                accumulate(pending, b, gb);
            }
        }
        Op::Maximum(a, b) => {
            let (av, bv) = (a.value().data(), b.value().data());
            let pick_b: Vec<bool> = av.iter().zip(bv).map(|(x, y)| y > x).collect();
            let mut ga = g.clone();
            let mut gb = g.clone();
            for ((pa, pb), &sel) in ga.data_mut().iter_mut().zip(gb.data_mut()).zip(&pick_b) {
                if sel {
                    *pa = T::zero();
                } else {
                    *pb = T::zero();
                }
            }
            accumulate(pending, a, ga);
            accumulate(pending, b, gb);
        }
        Op::AddScalar(a) => accumulate(pending, a, g.clone()),
        Op::MulScalar(a, c) => accumulate(pending, a, g.map(|v| v * *c)),
        Op::Relu(a) => accumulate(pending, a, g.zip_map(out, |g, y| if y > T::zero() { g } else { T::zero() })),
        Op::Sigmoid(a) => accumulate(pending, a, g.zip_map(out, |g, y| g * y * (T::one() - y))),
        Op::Ln(a) => accumulate(pending, a, g.zip_map(a.value(), |g, x| g / x)),
        Op::Square(a) => {
            let two = T::from_f64c(2.0);
            accumulate(pending, a, g.zip_map(a.value(), |g, x| two * g * x))
        }
        Op::ClampMin(a, f) => {
            accumulate(pending, a, g.zip_map(a.value(), |g, x| if x < *f { T::zero() } else { g }))
        }
        Op::Concat(parts) => {
            let n = out.batch();
            let mut off = 0;
            for p in parts {
                let len = p.value().sample_len();
                if p.requires_grad() {
                    let mut gp = Tensor::zeros(p.shape());
                    for s in 0..n {
                        gp.sample_mut(s).copy_from_slice(&g.sample(s)[off..off + len]);
                    }
                    accumulate(pending, p, gp);
                }
                off += len;
            }
        }
        Op::GlobalAvgPool(a) => {
            let plane = a.value().plane_len();
            let inv = T::from_f64c(1.0 / plane as f64);
            let mut ga = Tensor::zeros(a.shape());
            for (ch, &gv) in ga.data_mut().chunks_mut(plane).zip(g.data()) {
                ch.fill(gv * inv);
            }
            accumulate(pending, a, ga);
        }
        Op::ScaleChannels(x, gate) => {
            let plane = x.value().plane_len();
            if x.requires_grad() {
                let mut gx = g.clone();
                for (ch, &gv) in gx.data_mut().chunks_mut(plane).zip(gate.value().data()) {
                    ch.iter_mut().for_each(|v| *v = *v * gv);
                }
                accumulate(pending, x, gx);
            }
            if gate.requires_grad() {
                let data = g
                    .data()
                    .chunks(plane)
                    .zip(x.value().data().chunks(plane))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>())
                    .collect();
                accumulate(pending, gate, Tensor::from_vec(gate.shape(), data).expect("gate shape"));
            }
        }
        Op::Mean(a) => {
            let scale = g.data()[0] * T::from_f64c(1.0 / a.value().len() as f64);
            accumulate(pending, a, Tensor::full(a.shape(), scale));
        }
        Op::MeanPerSample(a) => {
            let len = a.value().sample_len();
            let inv = T::from_f64c(1.0 / len as f64);
            let mut ga = Tensor::zeros(a.shape());
            for (s, &gv) in g.data().iter().enumerate() {
                ga.sample_mut(s).fill(gv * inv);
            }
            accumulate(pending, a, ga);
        }
    }
}

/// Leaf gradients produced by [`Var::backward`].
pub struct Gradients<T: Real> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id())
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&var.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
