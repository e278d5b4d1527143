//! The three networks, their layer tables, and end-to-end fusion.

pub mod checkpoint;
pub mod fusion_net;
pub mod lateral;
pub mod recon;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fusion_net::{
    Auxiliary, AuxiliaryActivations, Branch, FusionForward, FusionNet, FusionSettings, LateralSet, LayerInputs,
    HEAD_BIAS_INIT,
};
pub use lateral::{forward_with_laterals, LateralConfig, LateralInput, TaskIndex};
pub use recon::ReconNet;

use crate::autograd::{Activation, Var};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::fusion::{CriterionKind, FusionCriterion, FusionWeightMaps, DEFAULT_NORM_EPS};
use crate::nn::{Bound, Conv2d, Mode, ParamStore, ENCODED_CHANNELS};
use crate::tensor::Real;

/// Width of the fusion backbone in the reference layer tables.
pub const REFERENCE_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    ReconSubtask1,
    MultifocusSubtask2,
    FusionMain,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::ReconSubtask1, NetworkKind::MultifocusSubtask2, NetworkKind::FusionMain];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::ReconSubtask1 => "recon_subtask1",
            NetworkKind::MultifocusSubtask2 => "multifocus_subtask2",
            NetworkKind::FusionMain => "fusion_main",
        }
    }

    /// Training stage that produces this network.
    pub fn stage(self) -> Stage {
        match self {
            NetworkKind::ReconSubtask1 => Stage::Subtask1,
            NetworkKind::MultifocusSubtask2 => Stage::Subtask2,
            NetworkKind::FusionMain => Stage::Main,
        }
    }

    pub fn is_fusion(self) -> bool {
        self != NetworkKind::ReconSubtask1
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NetworkKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown network kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Subtask1,
    Subtask2,
    Main,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Subtask1, Stage::Subtask2, Stage::Main];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Subtask1 => "subtask1",
            Stage::Subtask2 => "subtask2",
            Stage::Main => "main",
        }
    }

    pub fn network(self) -> NetworkKind {
        match self {
            Stage::Subtask1 => NetworkKind::ReconSubtask1,
            Stage::Subtask2 => NetworkKind::MultifocusSubtask2,
            Stage::Main => NetworkKind::FusionMain,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// Architecture options shared by the fusion networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel width of the fusion backbone.
    pub width: usize,
    pub attention_ratio: usize,
    pub bias: bool,
    /// Use one set of weights for both source branches.
    pub share_branches: bool,
    pub laterals: LateralConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { width: REFERENCE_WIDTH, attention_ratio: 4, bias: true, share_branches: false, laterals: LateralConfig::default() }
    }
}

/// Merging rule and weight-map post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub criterion: CriterionKind,
    pub fixed_weight: f64,
    pub normalize: bool,
    pub eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { criterion: CriterionKind::Nonlinear, fixed_weight: 0.5, normalize: true, eps: DEFAULT_NORM_EPS }
    }
}

impl FusionConfig {
    pub fn criterion(&self) -> FusionCriterion {
        FusionCriterion { kind: self.criterion, fixed_weight: self.fixed_weight }
    }

    pub fn with_criterion(mut self, c: FusionCriterion) -> Self {
        self.criterion = c.kind;
        self.fixed_weight = c.fixed_weight;
        self
    }
}

/// Everything needed to rebuild a network's architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, model: ModelConfig, fusion: FusionConfig) -> Self {
        Self { kind, model, fusion }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.criterion().validate()?;
        if !(self.fusion.eps >= 0.0 && self.fusion.eps.is_finite()) {
            return Err(Error::invalid(format!("normalization eps {} must be finite and nonnegative", self.fusion.eps)));
        }
        if self.kind == NetworkKind::FusionMain && self.model.laterals.from_subtask1 && self.model.width != ENCODED_CHANNELS {
            return Err(Error::invalid(format!(
                "the reconstruction lateral emits {ENCODED_CHANNELS} channels but the backbone width is {}; \
                 disable model.laterals.from_subtask1 or use width {ENCODED_CHANNELS}",
                self.model.width
            )));
        }
        Ok(())
    }

    fn fusion_settings(&self) -> FusionSettings {
        FusionSettings {
            width: self.model.width,
            attention_ratio: self.model.attention_ratio,
            bias: self.model.bias,
            share_branches: self.model.share_branches,
            normalize_weights: self.fusion.normalize,
            norm_eps: self.fusion.eps,
            criterion: self.fusion.criterion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Recon(ReconNet),
    Fusion(FusionNet),
}

impl Architecture {
    pub fn layers(&self) -> Vec<&Conv2d> {
        match self {
            Architecture::Recon(n) => n.layers(),
            Architecture::Fusion(n) => n.layers(),
        }
    }
}

/// Provenance carried with a network and its checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkHeader {
    pub spec: NetworkSpec,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Completed epochs.
    pub epochs: u64,
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct Network<T: Real> {
    pub header: NetworkHeader,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

/// Build a freshly initialized network. Equal seeds give identical weights.
pub fn instantiate(spec: NetworkSpec, seed: u64) -> Result<Network<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let arch = match spec.kind {
        NetworkKind::ReconSubtask1 => Architecture::Recon(ReconNet::new(&mut params, &mut rng, spec.model.bias)?),
        NetworkKind::MultifocusSubtask2 | NetworkKind::FusionMain => {
            Architecture::Fusion(FusionNet::new(&mut params, &mut rng, spec.fusion_settings())?)
        }
    };
    let net = Network { header: NetworkHeader { spec, seed, steps: 0, epochs: 0 }, arch, params };
    net.shape_audit()?;
    Ok(net)
}

/// One row of a layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub kernel: usize,
    pub input: usize,
    pub output: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerRow {
    fn new(name: impl Into<String>, kernel: usize, input: usize, output: usize, activation: Activation) -> Self {
        Self { name: name.into(), kernel, input, output, stride: 1, activation }
    }
}

impl fmt::Display for LayerRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {:>6} {:>6} {:>6} {:>6}  {}",
            self.name,
            self.kernel,
            self.input,
            self.output,
            self.stride,
            self.activation.name()
        )
    }
}

/// The layer table a network of `spec` must have, written out independently
/// of the constructors.
pub fn expected_layer_table(spec: &NetworkSpec) -> Vec<LayerRow> {
    use Activation::{Relu, Sigmoid};
    match spec.kind {
        NetworkKind::ReconSubtask1 => vec![
            LayerRow::new("c1", 3, 1, 16, Relu),
            LayerRow::new("ec1", 3, 16, 16, Relu),
            LayerRow::new("ec2", 3, 32, 16, Relu),
            LayerRow::new("ec3", 3, 48, 16, Relu),
            LayerRow::new("dc1", 3, 64, 64, Relu),
            LayerRow::new("dc2", 3, 64, 32, Relu),
            LayerRow::new("dc3", 3, 32, 16, Relu),
            LayerRow::new("dc4", 3, 16, 1, Relu),
        ],
        NetworkKind::MultifocusSubtask2 | NetworkKind::FusionMain => {
            let w = spec.model.width;
            let late_in = match spec.fusion.criterion {
                CriterionKind::Nonlinear | CriterionKind::Concat => 4 * w,
                CriterionKind::Hybrid => 2 * w,
                CriterionKind::Maximum | CriterionKind::Sum | CriterionKind::WeightedAverage => w,
            };
            let mut rows = vec![
                LayerRow::new("c2", 3, 1, w, Relu),
                LayerRow::new("c3", 3, 1, w, Relu),
                LayerRow::new("c4", 3, w, w, Relu),
                LayerRow::new("c5", 3, w, w, Relu),
                LayerRow::new("c6", 3, late_in, w, Relu),
                LayerRow::new("c7", 3, late_in, w, Relu),
                LayerRow::new("c8", 3, w, w, Relu),
                LayerRow::new("c9", 3, w, w, Relu),
                LayerRow::new("c10", 3, 4 * w, 1, Relu),
                LayerRow::new("c11", 3, 4 * w, 1, Relu),
            ];
            let branches: &[&str] = if spec.model.share_branches { &["a"] } else { &["a", "b"] };
            let hidden = w / spec.model.attention_ratio.max(1);
            for s in branches {
                rows.extend([
                    LayerRow::new(format!("msrb_{s}.c12"), 1, w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c13"), 3, w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c14"), 5, w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c15"), 1, 3 * w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c16"), 3, 3 * w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c17"), 5, 3 * w, w, Relu),
                    LayerRow::new(format!("msrb_{s}.c18"), 1, 3 * w, w, Relu),
                    LayerRow::new(format!("cam_{s}.w1"), 1, w, hidden, Relu),
                    LayerRow::new(format!("cam_{s}.w2"), 1, hidden, w, Sigmoid),
                ]);
            }
            rows
        }
    }
}

impl<T: Real> Network<T> {
    pub fn kind(&self) -> NetworkKind {
        self.header.spec.kind
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.header.spec
    }

    pub fn criterion(&self) -> FusionCriterion {
        self.header.spec.fusion.criterion()
    }

    pub fn is_trained(&self) -> bool {
        self.header.steps > 0
    }

    pub fn layer_table(&self) -> Vec<LayerRow> {
        self.arch
            .layers()
            .into_iter()
            .map(|l| LayerRow {
                name: l.name.clone(),
                kernel: l.spec.kernel,
                input: l.spec.in_channels,
                output: l.spec.out_channels,
                stride: l.spec.stride,
                activation: l.spec.activation,
            })
            .collect()
    }

    /// Compare the built layers with the expected table and check that every
    /// weight tensor has the declared shape.
    pub fn shape_audit(&self) -> Result<()> {
        let built = self.layer_table();
        let expected = expected_layer_table(&self.header.spec);
        if built.len() != expected.len() {
            return Err(Error::shape(format!("{} layers built, {} expected", built.len(), expected.len())));
        }
        for (b, e) in built.iter().zip(&expected) {
            if b != e {
                return Err(Error::shape(format!("layer mismatch: built `{b}`, expected `{e}`")));
            }
        }
        for l in self.arch.layers() {
            let w = self.params.get(l.weight);
            if w.value.shape() != l.spec.weight_shape() {
                return Err(Error::shape(format!("{} weight is {:?}", l.name, w.value.shape())));
            }
            if let Some(b) = l.bias {
                if self.params.get(b).value.shape() != [1, l.spec.out_channels, 1, 1] {
                    return Err(Error::shape(format!("{} bias has the wrong shape", l.name)));
                }
            }
        }
        Ok(())
    }

    /// Human-readable layer table.
    pub fn describe(&self) -> String {
        let spec = &self.header.spec;
        let mut out = format!("network {}\n", spec.kind);
        if spec.kind.is_fusion() {
            out += &format!(
                "criterion {}  width {}  attention_ratio {}  shared_branches {}  normalize {}\n",
                spec.fusion.criterion(),
                spec.model.width,
                spec.model.attention_ratio,
                spec.model.share_branches,
                spec.fusion.normalize
            );
        }
        out += &format!("{:<12} {:>6} {:>6} {:>6} {:>6}  {}\n", "layer", "kernel", "in", "out", "stride", "activation");
        for row in self.layer_table() {
            out += &format!("{row}\n");
        }
        out += &format!("parameters {}\n", self.params.num_scalars());
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network { header: self.header, arch: self.arch.clone(), params: self.params.cast() }
    }

    pub fn as_recon(&self) -> Result<&ReconNet> {
        match &self.arch {
            Architecture::Recon(n) => Ok(n),
            Architecture::Fusion(_) => Err(Error::invalid(format!("{} is not a reconstruction network", self.kind()))),
        }
    }

    pub fn as_fusion(&self) -> Result<&FusionNet> {
        match &self.arch {
            Architecture::Fusion(n) => Ok(n),
            Architecture::Recon(_) => Err(Error::invalid(format!("{} is not a fusion network", self.kind()))),
        }
    }
}

impl<T: Real> Auxiliary<T> {
    /// Bind frozen subtask networks as lateral sources for a main network
    /// configured with `laterals`.
    pub fn from_networks(
        laterals: LateralConfig,
        recon: Option<&Network<T>>,
        multifocus: Option<&Network<T>>,
    ) -> Result<Self> {
        let recon = match (laterals.from_subtask1, recon) {
            (true, Some(n)) => Some((n.as_recon()?.clone(), n.params.bind(Mode::Eval))),
            (true, None) => return Err(Error::MissingPrerequisite(Stage::Subtask1.as_str().into())),
            (false, _) => None,
        };
        let multifocus = match (laterals.from_subtask2, multifocus) {
            (true, Some(n)) => Some((n.as_fusion()?.clone(), n.params.bind(Mode::Eval))),
            (true, None) => return Err(Error::MissingPrerequisite(Stage::Subtask2.as_str().into())),
            (false, _) => None,
        };
        Ok(Self { recon, multifocus })
    }
}

/// Fusion output at full precision plus the export image.
pub struct FuseResult {
    pub fused: Image,
    /// Unclipped fused values.
    pub raw: Vec<f64>,
    pub maps: FusionWeightMaps,
}

/// Run a fusion network on two registered sources.
pub fn forward_fuse(net: &Network<f32>, aux: &Auxiliary<f32>, a: &Image, b: &Image) -> Result<FuseResult> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("source sizes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if !net.is_trained() {
        log::warn!("fusing with an untrained {} network", net.kind());
    }
    let fnet = net.as_fusion()?;
    let p: Bound<f32> = net.params.bind(Mode::Eval);
    let va = Var::constant(a.to_tensor::<f32>());
    let vb = Var::constant(b.to_tensor::<f32>());
    let acts = aux.activations(&va, &vb)?;
    let lat = aux.lateral_set(&acts);
    let out = fnet.forward(&p, &va, &vb, &lat)?;
    let (w, h) = a.dims();
    let to_vec = |v: &Var<f32>| v.value().data().iter().map(|&x| x as f64).collect::<Vec<_>>();
    let raw = to_vec(&out.fused);
    let maps = FusionWeightMaps::new(w, h, vec![to_vec(&out.w1), to_vec(&out.w2)])?;
    let fused = Image::from_clipped(w, h, raw.clone())?;
    Ok(FuseResult { fused, raw, maps })
}
