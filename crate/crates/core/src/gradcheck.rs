//! Finite-difference verification of reverse-mode gradients.
//!
//! A [`GradProblem`] is a scalar function of some input tensors and a
//! parameter store. [`check_problem`] compares its analytic gradient with
//! central differences along random directions and single coordinates.
//! [`standard_suite`] covers every network block and loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Activation, Var};
use crate::error::Result;
use crate::fusion::{fuse_vars, normalize_weight_vars, CriterionKind, FusionCriterion};
use crate::losses::{
    fusion_task_loss, loss_mse, loss_perceptual, loss_psnr, loss_ssim, LossContext, LossWeights, PerceptualExtractor,
    SsimParams,
};
use crate::networks::{forward_with_laterals, FusionNet, FusionSettings, LateralInput, LateralSet, TaskIndex};
use crate::nn::{Bound, ChannelAttention, Conv2d, ConvSpec, DenseDecoder, DenseEncoder, Mode, Msrb, ParamStore};
use crate::tensor::Tensor;

pub type Objective = Box<dyn Fn(&Bound<f64>, &[Var<f64>]) -> Result<Var<f64>>>;

pub struct GradProblem {
    pub store: ParamStore<f64>,
    pub inputs: Vec<Tensor<f64>>,
    /// Inputs whose gradients are checked; parameters are always checked.
    pub checked_inputs: Vec<usize>,
    pub objective: Objective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub instances: u64,
    /// Largest finite-difference step; shrunk by 10x while a kink sits
    /// inside the stencil.
    pub step: f64,
    pub min_step: f64,
    pub tolerance: f64,
    pub directions: usize,
    pub coordinates: usize,
    /// Fresh draws allowed per problem when no step avoids a kink.
    pub max_redraws: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            step: 1e-6,
            min_step: 1e-8,
            tolerance: 1e-3,
            directions: 2,
            coordinates: 6,
            max_redraws: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub name: String,
    pub instances: u64,
    pub checks: usize,
    pub worst_error: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q)).sum()
}

impl GradProblem {
    fn value(&self, store: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<f64> {
        let p = store.bind(Mode::Eval);
        let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::constant).collect();
        Ok((self.objective)(&p, &vars)?.item())
    }

    /// Analytic gradient: checked inputs first, then every parameter.
    pub fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let p = self.store.bind(Mode::Train);
        let vars: Vec<Var<f64>> = self.inputs.iter().cloned().map(Var::param).collect();
        let mut grads = (self.objective)(&p, &vars)?.backward();
        let mut flat: Vec<Vec<f64>> = self
            .checked_inputs
            .iter()
            .map(|&i| grads.get(&vars[i]).map_or_else(|| vec![0.0; self.inputs[i].len()], |g| g.data().to_vec()))
            .collect();
        for (g, (id, _)) in p.gradients(&mut grads).into_iter().zip(self.store.iter()) {
            flat.push(g.map_or_else(|| vec![0.0; self.store.tensor(id).len()], Tensor::into_vec));
        }
        Ok(flat)
    }

    fn shifted(&self, direction: &[Vec<f64>], scale: f64) -> Result<f64> {
        let mut inputs = self.inputs.clone();
        let mut store = self.store.clone();
        let n = self.checked_inputs.len();
        for (slot, &i) in self.checked_inputs.iter().enumerate() {
            for (v, d) in inputs[i].data_mut().iter_mut().zip(&direction[slot]) {
                *v += scale * d;
            }
        }
        let ids: Vec<_> = self.store.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            for (v, d) in store.tensor_mut(id).data_mut().iter_mut().zip(&direction[n + k]) {
                *v += scale * d;
            }
        }
        self.value(&store, &inputs)
    }

    fn central(&self, direction: &[Vec<f64>], h: f64) -> Result<f64> {
        Ok((self.shifted(direction, h)? - self.shifted(direction, -h)?) / (2.0 * h))
    }

    /// Central difference at the largest step that halving leaves unchanged.
    /// A change means a ReLU kink lies inside the stencil. `None` if every
    /// step down to `min_step` straddles one.
    pub fn numeric(&self, direction: &[Vec<f64>], opts: &GradCheckOptions) -> Result<Option<f64>> {
        let mut h = opts.step;
        while h >= opts.min_step {
            let full = self.central(direction, h)?;
            let half = self.central(direction, h / 2.0)?;
            // Rounding in the objective contributes about 1e-16 / h.
            if (full - half).abs() <= 1e-5 * full.abs().max(half.abs()) + 1e-15 / h {
                return Ok(Some(half));
            }
            h /= 10.0;
        }
        Ok(None)
    }

    /// Zero-initialized biases leave ReLU inputs exactly on the kink
    /// wherever the previous layer is dead; move them off it.
    pub fn jitter_biases(&mut self, rng: &mut impl Rng) {
        let ids: Vec<_> = self.store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
        for id in ids {
            for v in self.store.tensor_mut(id).data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
}

/// Check one problem; returns the worst relative error and the number of
/// comparisons, or a description of the first mismatch.
pub fn check_problem(
    problem: &GradProblem,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> std::result::Result<(f64, usize), String> {
    let grad = problem.analytic().map_err(|e| e.to_string())?;
    let total: usize = grad.iter().map(Vec::len).sum();
    if total == 0 {
        return Err("nothing to check".into());
    }
    let wanted = opts.directions + opts.coordinates;
    let (mut checked, mut redraws, mut worst) = (0, 0, 0.0f64);
    while checked < wanted {
        let dir: Vec<Vec<f64>> = if checked < opts.directions {
            grad.iter().map(|g| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        } else {
            let mut k = rng.random_range(0..total);
            let mut dir: Vec<Vec<f64>> = grad.iter().map(|g| vec![0.0; g.len()]).collect();
            for d in dir.iter_mut() {
                if k < d.len() {
                    d[k] = 1.0;
                    break;
                }
                k -= d.len();
            }
            dir
        };
        let Some(numeric) = problem.numeric(&dir, opts).map_err(|e| e.to_string())? else {
            redraws += 1;
            if redraws > opts.max_redraws {
                return Err("every stencil straddles a kink".into());
            }
            continue;
        };
        let analytic = dot(&grad, &dir);
        let err = relative_error(analytic, numeric);
        if err >= opts.tolerance {
            return Err(format!("check {checked}: analytic {analytic:e}, numeric {numeric:e}, relative error {err:e}"));
        }
        worst = worst.max(err);
        checked += 1;
    }
    Ok((worst, checked))
}

type Builder = Box<dyn Fn(&mut ChaCha8Rng, u64) -> GradProblem>;

/// A named family of random problems.
pub struct SuiteEntry {
    pub name: String,
    build: Builder,
}

impl SuiteEntry {
    pub fn new(name: impl Into<String>, build: impl Fn(&mut ChaCha8Rng, u64) -> GradProblem + 'static) -> Self {
        Self { name: name.into(), build: Box::new(build) }
    }

    /// Check `opts.instances` random problems.
    pub fn run(&self, opts: &GradCheckOptions) -> std::result::Result<GradCheckOutcome, String> {
        let mut worst = 0.0f64;
        let mut checks = 0;
        for instance in 0..opts.instances {
            let mut rng = ChaCha8Rng::seed_from_u64(instance.wrapping_mul(0x9E37_79B9) ^ self.name.len() as u64);
            let mut problem = (self.build)(&mut rng, instance);
            problem.jitter_biases(&mut rng);
            let (w, n) =
                check_problem(&problem, opts, &mut rng).map_err(|e| format!("{} instance {instance}: {e}", self.name))?;
            worst = worst.max(w);
            checks += n;
        }
        Ok(GradCheckOutcome { name: self.name.clone(), instances: opts.instances, checks, worst_error: worst })
    }
}

const SIDE: usize = 8;

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches length")
}

fn image(rng: &mut impl Rng) -> Tensor<f64> {
    random_tensor(rng, [1, 1, SIDE, SIDE], 0.05, 0.95)
}

/// Random-weighted mean, so every output element contributes.
fn project(out: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let r = Var::constant(random_tensor(&mut rng, out.shape(), -1.0, 1.0));
    Ok(out.mul(&r)?.mean())
}

fn block(
    name: impl Into<String>,
    channels: usize,
    make: impl Fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Objective + 'static,
) -> SuiteEntry {
    SuiteEntry::new(name, move |rng, _| {
        let mut store = ParamStore::new();
        let objective = make(&mut store, rng);
        let x = random_tensor(rng, [2, channels, SIDE, SIDE], -1.0, 1.0);
        GradProblem { store, inputs: vec![x], checked_inputs: vec![0], objective }
    })
}

fn loss_entry(name: &str, both_sides: bool, objective: impl Fn(u64) -> Objective + 'static) -> SuiteEntry {
    SuiteEntry::new(name, move |rng, instance| GradProblem {
        store: ParamStore::new(),
        inputs: vec![image(rng), image(rng)],
        checked_inputs: if both_sides { vec![0, 1] } else { vec![0] },
        objective: objective(instance),
    })
}

fn extractor(seed: u64) -> PerceptualExtractor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = DenseEncoder::new(&mut store, &mut rng, true).expect("encoder builds");
    store.freeze_all();
    PerceptualExtractor::new(enc, &store)
}

/// Network blocks: convolutions, attention, MSRB, dense encoder and
/// decoder, lateral layers and the full fusion network.
pub fn block_suite() -> Vec<SuiteEntry> {
    let mut v = Vec::new();
    for act in [Activation::Relu, Activation::Sigmoid, Activation::None] {
        for k in [1, 3, 5] {
            v.push(block(format!("conv{k}_{}", act.name().to_lowercase()), 3, move |store, rng| {
                let conv = Conv2d::new(store, rng, "conv", ConvSpec::new(k, 3, 4, act), true).expect("conv builds");
                Box::new(move |p, x| project(&conv.forward(p, &x[0])?, 1))
            }));
        }
    }
    v.push(block("channel_attention", 8, |store, rng| {
        let cam = ChannelAttention::new(store, rng, "cam", 8, 4).expect("attention builds");
        Box::new(move |p, x| project(&cam.forward(p, &x[0])?, 2))
    }));
    v.push(block("msrb", 4, |store, rng| {
        let msrb = Msrb::new(store, rng, "msrb", 4, true).expect("msrb builds");
        Box::new(move |p, x| project(&msrb.forward(p, &x[0])?, 3))
    }));
    v.push(block("dense_encoder", 1, |store, rng| {
        let enc = DenseEncoder::new(store, rng, true).expect("encoder builds");
        Box::new(move |p, x| {
            let e = enc.forward(p, &x[0])?;
            project(&e.features, 4)?.add(&project(&e.taps[0], 5)?)
        })
    }));
    v.push(block("dense_decoder", 64, |store, rng| {
        let dec = DenseDecoder::new(store, rng, true).expect("decoder builds");
        Box::new(move |p, x| project(&dec.forward(p, &x[0])?, 6))
    }));
    v.push(SuiteEntry::new("lateral_layer", |rng, _| {
        let mut store = ParamStore::new();
        let own = Conv2d::new(&mut store, rng, "own", ConvSpec::new(3, 2, 3, Activation::Relu), true).expect("conv");
        let mut frozen = ParamStore::new();
        let src = Conv2d::new(&mut frozen, rng, "src", ConvSpec::new(3, 2, 3, Activation::Relu), true).expect("conv");
        for (id, _) in frozen.clone().iter() {
            for v in frozen.tensor_mut(id).data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = random_tensor(rng, [1, 2, SIDE, SIDE], -1.0, 1.0);
        let side = random_tensor(rng, [1, 2, SIDE, SIDE], -1.0, 1.0);
        let frozen = frozen.bind(Mode::Eval);
        let objective: Objective = Box::new(move |p, v| {
            let lat = [LateralInput {
                source: TaskIndex::MultiFocus,
                conv: &src,
                params: &frozen,
                input: Var::constant(side.clone()),
            }];
            project(&forward_with_laterals(TaskIndex::Fusion, &own, p, &v[0], &lat)?, 7)
        });
        GradProblem { store, inputs: vec![x], checked_inputs: vec![0], objective }
    }));
    for kind in [CriterionKind::Nonlinear, CriterionKind::Sum, CriterionKind::WeightedAverage] {
        v.push(SuiteEntry::new(format!("fusion_net_{}", kind.as_str()), move |rng, _| {
            let mut store = ParamStore::new();
            let settings = FusionSettings {
                width: 4,
                attention_ratio: 2,
                bias: true,
                share_branches: false,
                normalize_weights: true,
                norm_eps: 1e-8,
                criterion: FusionCriterion::new(kind),
            };
            let net = FusionNet::new(&mut store, rng, settings).expect("fusion net builds");
            let objective: Objective =
                Box::new(move |p, v| project(&net.forward(p, &v[0], &v[1], &LateralSet::empty())?.fused, 8));
            GradProblem { store, inputs: vec![image(rng), image(rng)], checked_inputs: vec![0, 1], objective }
        }));
    }
    v.push(SuiteEntry::new("normalize_and_fuse", |rng, _| {
        let inputs = vec![
            image(rng),
            image(rng),
            random_tensor(rng, [1, 1, SIDE, SIDE], 0.1, 2.0),
            random_tensor(rng, [1, 1, SIDE, SIDE], 0.1, 2.0),
        ];
        let objective: Objective = Box::new(|_, v| {
            let (w1, w2) = normalize_weight_vars(&v[2], &v[3], 1e-8)?;
            project(&fuse_vars(&v[0], &v[1], &w1, &w2)?, 9)
        });
        GradProblem { store: ParamStore::new(), inputs, checked_inputs: vec![0, 1, 2, 3], objective }
    }));
    v
}

/// Every loss term and the two-reference fusion loss.
pub fn loss_suite() -> Vec<SuiteEntry> {
    vec![
        loss_entry("loss_ssim_w5", true, |_| Box::new(|_, v| loss_ssim(&v[0], &v[1], &SsimParams::with_window(5)))),
        loss_entry("loss_ssim_w7", true, |_| Box::new(|_, v| loss_ssim(&v[0], &v[1], &SsimParams::with_window(7)))),
        loss_entry("loss_mse", true, |_| Box::new(|_, v| loss_mse(&v[0], &v[1]))),
        loss_entry("loss_psnr", true, |_| Box::new(|_, v| loss_psnr(&v[0], &v[1], 50.0))),
        // The reference side is detached, so only the prediction is checked.
        loss_entry("loss_perceptual", false, |i| {
            let ex = extractor(i);
            Box::new(move |_, v| loss_perceptual(&v[0], &v[1], &ex))
        }),
        SuiteEntry::new("fusion_task_loss", |rng, i| {
            let ex = extractor(i + 100);
            let objective: Objective = Box::new(move |_, v| {
                let mut ctx = LossContext::new(LossWeights::default(), &ex);
                ctx.ssim = SsimParams::with_window(5);
                Ok(fusion_task_loss(&v[0], &v[1], &v[2], &ctx)?.0)
            });
            GradProblem { store: ParamStore::new(), inputs: vec![image(rng), image(rng), image(rng)], checked_inputs: vec![0], objective }
        }),
    ]
}

pub fn standard_suite() -> Vec<SuiteEntry> {
    let mut v = block_suite();
    v.extend(loss_suite());
    v
}
