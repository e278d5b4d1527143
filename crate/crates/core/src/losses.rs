//! Structural-similarity, PSNR, perceptual and MSE losses.
//!
//! Every loss takes `[N, 1, H, W]` variables and returns a `[1, 1, 1, 1]`
//! variable, so the same code path serves training (gradients) and
//! evaluation (constants).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Var};
use crate::data::{filter::gaussian_kernel, Image};
use crate::error::{Error, Result};
use crate::nn::{Bound, DenseEncoder, Mode, ParamStore};
use crate::tensor::{Real, Tensor};

pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_PSNR_CAP_DB: f64 = 50.0;
pub const MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: SSIM_SIGMA, k1: 0.01, k2: 0.03 }
    }
}

impl SsimParams {
    pub fn with_window(window: usize) -> Self {
        Self { window, ..Self::default() }
    }

    /// Stabilizers for a unit dynamic range.
    pub fn c1(&self) -> f64 {
        self.k1 * self.k1
    }

    pub fn c2(&self) -> f64 {
        self.k2 * self.k2
    }

    /// 2-D window as the outer product of the 1-D Gaussian.
    pub fn window_weights(&self) -> Vec<f64> {
        let g = gaussian_kernel(self.sigma, self.window / 2);
        g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
    }
}

fn check_pair<T: Real>(x: &Var<T>, y: &Var<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!("loss inputs differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Local SSIM over every valid window position.
pub fn ssim_map<T: Real>(x: &Var<T>, y: &Var<T>, p: &SsimParams) -> Result<Var<T>> {
    check_pair(x, y)?;
    let [_, c, h, w] = x.shape();
    if c != 1 {
        return Err(Error::shape(format!("SSIM expects single-channel input, got {:?}", x.shape())));
    }
    if p.window.is_multiple_of(2) || p.window > h.min(w) {
        return Err(Error::invalid(format!("SSIM window {} must be odd and fit {h}x{w}", p.window)));
    }
    let k = p.window;
    let win = Var::constant(
        Tensor::from_vec([1, 1, k, k], p.window_weights().into_iter().map(T::from_f64c).collect())
            .expect("window shape"),
    );
    let blur = |v: &Var<T>| v.conv2d(&win, None, 1, 0, Activation::None);
    let mu_x = blur(x)?;
    let mu_y = blur(y)?;
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(&mu_y)?;
    let var_x = blur(&x.square())?.sub(&mu_xx)?;
    let var_y = blur(&y.square())?.sub(&mu_yy)?;
    let cov = blur(&x.mul(y)?)?.sub(&mu_xy)?;
    let num = mu_xy.mul_scalar(2.0).add_scalar(p.c1()).mul(&cov.mul_scalar(2.0).add_scalar(p.c2()))?;
    let den = mu_xx.add(&mu_yy)?.add_scalar(p.c1()).mul(&var_x.add(&var_y)?.add_scalar(p.c2()))?;
    num.div(&den)
}

pub fn ssim_var<T: Real>(x: &Var<T>, y: &Var<T>, p: &SsimParams) -> Result<Var<T>> {
    Ok(ssim_map(x, y, p)?.mean())
}

/// Mean SSIM of two images.
pub fn ssim(x: &Image, y: &Image, p: &SsimParams) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::shape(format!("SSIM of {:?} and {:?}", x.dims(), y.dims())));
    }
    let xv = Var::<f64>::constant(x.to_tensor());
    let yv = Var::<f64>::constant(y.to_tensor());
    Ok(ssim_var(&xv, &yv, p)?.item())
}

/// `1 - SSIM`, in `[0, 2]`.
pub fn loss_ssim<T: Real>(x: &Var<T>, y: &Var<T>, p: &SsimParams) -> Result<Var<T>> {
    Ok(ssim_var(x, y, p)?.mul_scalar(-1.0).add_scalar(1.0))
}

pub fn loss_mse<T: Real>(x: &Var<T>, y: &Var<T>) -> Result<Var<T>> {
    check_pair(x, y)?;
    Ok(x.sub(y)?.square().mean())
}

/// Capped PSNR deficit `max(0, (cap - psnr) / cap)`, averaged over the batch.
/// Per-sample MSE is floored so identical inputs give PSNR above any cap.
pub fn loss_psnr<T: Real>(x: &Var<T>, y: &Var<T>, cap_db: f64) -> Result<Var<T>> {
    check_pair(x, y)?;
    if cap_db <= 0.0 {
        return Err(Error::invalid(format!("PSNR cap {cap_db} must be positive")));
    }
    let mse = x.sub(y)?.square().mean_per_sample().clamp_min(MSE_FLOOR);
    // psnr = -10 log10(mse); (cap - psnr) / cap = 1 + 10 ln(mse) / (cap ln 10)
    let deficit = mse.ln().mul_scalar(10.0 / (cap_db * std::f64::consts::LN_10)).add_scalar(1.0);
    Ok(deficit.relu().mean())
}

/// PSNR in dB for unit dynamic range.
pub fn psnr_db(mse: f64) -> f64 {
    -10.0 * mse.max(MSE_FLOOR).log10()
}

/// Frozen dense encoder whose EC1..EC3 activations define the perceptual
/// distance.
pub struct PerceptualExtractor<T: Real> {
    encoder: DenseEncoder,
    bound: Bound<T>,
}

impl<T: Real> PerceptualExtractor<T> {
    pub fn new(encoder: DenseEncoder, params: &ParamStore<T>) -> Self {
        Self { encoder, bound: params.bind(Mode::Eval) }
    }

    pub fn taps(&self, x: &Var<T>) -> Result<[Var<T>; 3]> {
        Ok(self.encoder.forward(&self.bound, x)?.taps)
    }
}

/// Mean over the three taps of the mean squared feature distance.
pub fn loss_perceptual<T: Real>(x: &Var<T>, y: &Var<T>, extractor: &PerceptualExtractor<T>) -> Result<Var<T>> {
    check_pair(x, y)?;
    let tx = extractor.taps(x)?;
    let ty = extractor.taps(&y.detach())?;
    let mut acc: Option<Var<T>> = None;
    for (a, b) in tx.iter().zip(&ty) {
        let d = a.sub(b)?.square().mean();
        acc = Some(match acc {
            Some(s) => s.add(&d)?,
            None => d,
        });
    }
    Ok(acc.expect("three taps").mul_scalar(1.0 / 3.0))
}

/// Weights of the SSIM, PSNR, perceptual and MSE terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ssim: f64,
    pub psnr: f64,
    pub perceptual: f64,
    pub mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ssim: 1.0, psnr: 0.1, perceptual: 0.1, mse: 1.0 }
    }
}

impl LossWeights {
    pub fn only_mse() -> Self {
        Self { ssim: 0.0, psnr: 0.0, perceptual: 0.0, mse: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("loss weights must be nonnegative: {self:?}")));
        }
        if a.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.ssim, self.psnr, self.perceptual, self.mse]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskTag {
    /// Multi-focus fusion subtask.
    Lm,
    /// Cross-modal fusion main task.
    Lf,
    /// Reconstruction subtask.
    Le,
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskTag::Lm => "Lm",
            TaskTag::Lf => "Lf",
            TaskTag::Le => "Le",
        })
    }
}

/// Unweighted term values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ssim: f64,
    pub psnr: f64,
    pub perceptual: f64,
    pub mse: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.ssim, self.psnr, self.perceptual, self.mse]
    }

    pub fn weighted_total(&self, lw: &LossWeights) -> f64 {
        self.as_array().iter().zip(lw.as_array()).map(|(t, a)| t * a).sum()
    }

    fn lerp_half(&self, other: &LossTerms) -> LossTerms {
        LossTerms {
            ssim: 0.5 * (self.ssim + other.ssim),
            psnr: 0.5 * (self.psnr + other.psnr),
            perceptual: 0.5 * (self.perceptual + other.perceptual),
            mse: 0.5 * (self.mse + other.mse),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
    pub tag: TaskTag,
}

impl LossReport {
    pub fn new(terms: LossTerms, lw: &LossWeights, tag: TaskTag) -> Self {
        Self { terms, total: terms.weighted_total(lw), tag }
    }
}

/// Settings shared by every combined-loss evaluation.
pub struct LossContext<'a, T: Real> {
    pub weights: LossWeights,
    pub ssim: SsimParams,
    pub psnr_cap_db: f64,
    pub extractor: &'a PerceptualExtractor<T>,
}

impl<'a, T: Real> LossContext<'a, T> {
    pub fn new(weights: LossWeights, extractor: &'a PerceptualExtractor<T>) -> Self {
        Self { weights, ssim: SsimParams::default(), psnr_cap_db: DEFAULT_PSNR_CAP_DB, extractor }
    }
}

/// Weighted sum of the four terms between prediction `x` and reference `y`.
pub fn combined_loss<T: Real>(x: &Var<T>, y: &Var<T>, ctx: &LossContext<T>, tag: TaskTag) -> Result<(Var<T>, LossReport)> {
    ctx.weights.validate()?;
    let terms = [
        loss_ssim(x, y, &ctx.ssim)?,
        loss_psnr(x, y, ctx.psnr_cap_db)?,
        loss_perceptual(x, y, ctx.extractor)?,
        loss_mse(x, y)?,
    ];
    let alphas = ctx.weights.as_array();
    let mut total: Option<Var<T>> = None;
    for (t, &a) in terms.iter().zip(&alphas) {
        if a == 0.0 {
            continue;
        }
        let w = t.mul_scalar(a);
        total = Some(match total {
            Some(s) => s.add(&w)?,
            None => w,
        });
    }
    let values = LossTerms {
        ssim: terms[0].item().as_f64(),
        psnr: terms[1].item().as_f64(),
        perceptual: terms[2].item().as_f64(),
        mse: terms[3].item().as_f64(),
    };
    Ok((total.expect("validated weights"), LossReport::new(values, &ctx.weights, tag)))
}

/// Unsupervised two-reference loss: the mean of the combined loss against
/// each source.
pub fn fusion_task_loss<T: Real>(fused: &Var<T>, a: &Var<T>, b: &Var<T>, ctx: &LossContext<T>) -> Result<(Var<T>, LossReport)> {
    let (la, ra) = combined_loss(fused, a, ctx, TaskTag::Lf)?;
    let (lb, rb) = combined_loss(fused, b, ctx, TaskTag::Lf)?;
    let total = la.add(&lb)?.mul_scalar(0.5);
    Ok((total, LossReport::new(ra.terms.lerp_half(&rb.terms), &ctx.weights, TaskTag::Lf)))
}

/// Sum of the three task losses.
pub fn total_loss(lm: f64, lf: f64, le: f64) -> f64 {
    lm + lf + le
}
