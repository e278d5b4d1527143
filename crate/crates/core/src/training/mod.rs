//! Staged training: reconstruction subtask, multi-focus subtask, then the
//! fusion main task on top of the frozen subtasks.

pub mod freeze;
pub mod log;
pub mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use self::freeze::{freeze, FrozenCheckpoint};
pub use self::log::{LogRow, TrainLog};
pub use self::optim::{gradient_step, AdamParams, Optimizer, OptimizerKind};

use crate::autograd::Var;
use crate::data::{augment, epoch_order, extract_patches, Augmentation, DatasetManifest, Image, ImagePair, PairKind};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, fusion_task_loss, LossContext, LossReport, LossWeights, PerceptualExtractor, SsimParams, TaskTag,
    DEFAULT_PSNR_CAP_DB,
};
use crate::networks::{
    instantiate, save_checkpoint, Auxiliary, Checkpoint, FusionConfig, LateralSet, ModelConfig, Network, NetworkKind,
    NetworkSpec, Stage,
};
use crate::nn::{Bound, Mode};

/// Seed offset of the stand-in perceptual encoder used when no trained
/// reconstruction network is available.
const EXTRACTOR_SEED_OFFSET: u64 = 0x5EED_0E7C;

/// A dataset manifest and its share of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub path: PathBuf,
    /// Records per epoch as a multiple of the manifest size.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// In-memory pairs with a sampling weight.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub pairs: Vec<ImagePair>,
    pub weight: f64,
}

impl DataSource {
    pub fn new(pairs: Vec<ImagePair>) -> Self {
        Self { pairs, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    pub patch_width: usize,
    pub patch_height: usize,
    /// Defaults to the patch width (non-overlapping tiles).
    pub patch_stride: Option<usize>,
    pub seed: u64,
    pub manifests: Vec<ManifestSource>,
    pub loss: LossWeights,
    pub ssim: SsimParams,
    pub psnr_cap_db: f64,
    pub optimizer: OptimizerKind,
    pub augmentation: Augmentation,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
}

impl StageConfig {
    /// Reference hyperparameters of each stage.
    pub fn defaults(stage: Stage) -> Self {
        let (batch_size, epochs, patch) = match stage {
            Stage::Subtask1 => (8, 4, (256, 256)),
            Stage::Subtask2 | Stage::Main => (16, 10, (80, 64)),
        };
        Self {
            stage,
            learning_rate: 1e-4,
            batch_size,
            epochs,
            max_steps: None,
            patch_width: patch.0,
            patch_height: patch.1,
            patch_stride: None,
            seed: 0,
            manifests: Vec::new(),
            loss: LossWeights::default(),
            ssim: SsimParams::default(),
            psnr_cap_db: DEFAULT_PSNR_CAP_DB,
            optimizer: OptimizerKind::Adam,
            augmentation: Augmentation::default(),
            model: ModelConfig::default(),
            fusion: FusionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if self.patch_width == 0 || self.patch_height == 0 || self.patch_stride == Some(0) {
            return Err(Error::Config("patch sizes and stride must be positive".into()));
        }
        if self.manifests.iter().any(|m| !(m.weight >= 0.0 && m.weight.is_finite())) {
            return Err(Error::Config("manifest sampling weights must be nonnegative".into()));
        }
        if self.psnr_cap_db.is_nan() || self.psnr_cap_db <= 0.0 {
            return Err(Error::Config("psnr cap must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.stage.network(), self.model, self.fusion)
    }

    pub fn pair_kind(&self) -> PairKind {
        match self.stage {
            Stage::Subtask1 => PairKind::Recon,
            Stage::Subtask2 => PairKind::MultiFocus,
            Stage::Main => PairKind::CrossModal,
        }
    }

    pub fn task_tag(&self) -> TaskTag {
        match self.stage {
            Stage::Subtask1 => TaskTag::Le,
            Stage::Subtask2 => TaskTag::Lm,
            Stage::Main => TaskTag::Lf,
        }
    }
}

/// Frozen checkpoints of earlier stages.
#[derive(Debug, Clone, Default)]
pub struct Priors {
    pub subtask1: Option<FrozenCheckpoint>,
    pub subtask2: Option<FrozenCheckpoint>,
}

impl Priors {
    pub fn new(subtask1: Option<Checkpoint>, subtask2: Option<Checkpoint>) -> Result<Self> {
        let p = Self { subtask1: subtask1.map(freeze), subtask2: subtask2.map(freeze) };
        for (f, kind) in [(&p.subtask1, NetworkKind::ReconSubtask1), (&p.subtask2, NetworkKind::MultifocusSubtask2)] {
            if let Some(f) = f {
                if f.kind() != kind {
                    return Err(Error::invalid(format!("expected a {kind} checkpoint, got {}", f.kind())));
                }
            }
        }
        Ok(p)
    }

    /// Fail unless every checkpoint `stage` depends on is present.
    pub fn require(&self, stage: Stage) -> Result<()> {
        if stage == Stage::Main {
            if self.subtask1.is_none() {
                return Err(Error::MissingPrerequisite(Stage::Subtask1.as_str().into()));
            }
            if self.subtask2.is_none() {
                return Err(Error::MissingPrerequisite(Stage::Subtask2.as_str().into()));
            }
        }
        Ok(())
    }

    pub fn verify(&self) -> Result<()> {
        self.subtask1.iter().chain(&self.subtask2).try_for_each(FrozenCheckpoint::verify)
    }
}

/// Everything a stage needs to evaluate its loss, apart from the weights
/// being trained.
pub struct StageRunner {
    stage: Stage,
    tag: TaskTag,
    loss: LossWeights,
    ssim: SsimParams,
    psnr_cap_db: f64,
    extractor: PerceptualExtractor<f32>,
    aux: Auxiliary<f32>,
}

impl StageRunner {
    pub fn new(cfg: &StageConfig, priors: &Priors) -> Result<Self> {
        priors.require(cfg.stage)?;
        let recon = match (&priors.subtask1, cfg.stage) {
            (Some(f), Stage::Subtask2 | Stage::Main) => f.network()?,
            _ => {
                let spec = NetworkSpec::new(NetworkKind::ReconSubtask1, cfg.model, cfg.fusion);
                let mut n = instantiate(spec, cfg.seed.wrapping_add(EXTRACTOR_SEED_OFFSET))?;
                n.params.freeze_all();
                n
            }
        };
        let extractor = PerceptualExtractor::new(recon.as_recon()?.encoder.clone(), &recon.params);
        let aux = if cfg.stage == Stage::Main {
            let mf = priors.subtask2.as_ref().map(|f| f.network()).transpose()?;
            if let Some(mf) = &mf {
                if cfg.model.laterals.from_subtask2 && mf.spec().model.width != cfg.model.width {
                    return Err(Error::Config(format!(
                        "subtask2 checkpoint has width {}, main network is configured with {}",
                        mf.spec().model.width,
                        cfg.model.width
                    )));
                }
            }
            Auxiliary::from_networks(cfg.model.laterals, Some(&recon), mf.as_ref())?
        } else {
            Auxiliary::none()
        };
        Ok(Self {
            stage: cfg.stage,
            tag: cfg.task_tag(),
            loss: cfg.loss,
            ssim: cfg.ssim,
            psnr_cap_db: cfg.psnr_cap_db,
            extractor,
            aux,
        })
    }

    pub fn auxiliary(&self) -> &Auxiliary<f32> {
        &self.aux
    }

    /// Loss of `net` (bound as `p`) on one batch of equally sized pairs.
    pub fn batch_loss(&self, net: &Network<f32>, p: &Bound<f32>, batch: &[&ImagePair]) -> Result<(Var<f32>, LossReport)> {
        let a = Var::constant(Image::batch_tensor::<f32>(&batch.iter().map(|x| &x.a).collect::<Vec<_>>())?);
        let b = Var::constant(Image::batch_tensor::<f32>(&batch.iter().map(|x| &x.b).collect::<Vec<_>>())?);
        let ctx = LossContext { weights: self.loss, ssim: self.ssim, psnr_cap_db: self.psnr_cap_db, extractor: &self.extractor };
        let target = || -> Result<Var<f32>> {
            let t = batch
                .iter()
                .map(|x| x.target().ok_or_else(|| Error::invalid(format!("{} pair has no target", x.kind))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Var::constant(Image::batch_tensor::<f32>(&t)?))
        };
        match self.stage {
            Stage::Subtask1 => {
                let out = net.as_recon()?.forward(p, &a)?;
                combined_loss(&out, &target()?, &ctx, self.tag)
            }
            Stage::Subtask2 => {
                let out = net.as_fusion()?.forward(p, &a, &b, &LateralSet::empty())?;
                combined_loss(&out.fused, &target()?, &ctx, self.tag)
            }
            Stage::Main => {
                let acts = self.aux.activations(&a, &b)?;
                let lat = self.aux.lateral_set(&acts);
                let out = net.as_fusion()?.forward(p, &a, &b, &lat)?;
                fusion_task_loss(&out.fused, &a, &b, &ctx)
            }
        }
    }

    /// Mean stage loss over `pairs`, one pair at a time, without gradients.
    pub fn dataset_loss(&self, net: &Network<f32>, pairs: &[ImagePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::invalid("no pairs to evaluate"));
        }
        let p = net.params.bind(Mode::Eval);
        let mut sum = 0.0;
        for pair in pairs {
            sum += self.batch_loss(net, &p, &[pair])?.1.total;
        }
        Ok(sum / pairs.len() as f64)
    }
}

/// Optional inputs and outputs of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint (optimizer moments restart).
    pub resume: Option<Checkpoint>,
    /// Where per-epoch and final checkpoints and the CSV log go.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Load every manifest of the stage and check its pair kind.
pub fn load_sources(cfg: &StageConfig) -> Result<Vec<DataSource>> {
    if cfg.manifests.is_empty() {
        return Err(Error::Config(format!("no manifest configured for stage {}", cfg.stage)));
    }
    cfg.manifests
        .iter()
        .map(|m| {
            let manifest = DatasetManifest::load(&m.path)?;
            if manifest.kind != cfg.pair_kind() {
                return Err(Error::Manifest {
                    path: m.path.clone(),
                    reason: format!("stage {} needs {} pairs, manifest holds {}", cfg.stage, cfg.pair_kind(), manifest.kind),
                });
            }
            Ok(DataSource { pairs: manifest.load_pairs()?, weight: m.weight })
        })
        .collect()
}

/// Train one stage from the manifests named in `cfg`.
pub fn train_stage(cfg: &StageConfig, priors: &Priors, opts: &TrainOptions) -> Result<StageOutcome> {
    let sources = load_sources(cfg)?;
    train_stage_on(cfg, &sources, priors, opts)
}

/// Cut every source into training patches.
pub fn patch_sources(cfg: &StageConfig, sources: &[DataSource]) -> Result<Vec<DataSource>> {
    let stride = cfg.patch_stride.unwrap_or(cfg.patch_width);
    sources
        .iter()
        .map(|s| {
            let mut pairs = Vec::new();
            for p in &s.pairs {
                if p.kind != cfg.pair_kind() {
                    return Err(Error::invalid(format!("stage {} cannot train on {} pairs", cfg.stage, p.kind)));
                }
                pairs.extend(extract_patches(p, cfg.patch_width, cfg.patch_height, stride)?);
            }
            Ok(DataSource { pairs, weight: s.weight })
        })
        .collect()
}

/// Sample indices `(source, pair)` of one epoch.
fn epoch_samples(sources: &[DataSource], seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let mut pool = Vec::new();
    for (si, s) in sources.iter().enumerate() {
        let n = s.pairs.len();
        if n == 0 {
            continue;
        }
        let count = (s.weight * n as f64).round() as usize;
        let perm = epoch_order(n, seed.wrapping_add(si as u64 + 1), epoch);
        pool.extend((0..count).map(|k| (si, perm[k % n])));
    }
    let order = epoch_order(pool.len(), seed, epoch);
    order.into_iter().map(|i| pool[i]).collect()
}

/// Train one stage on in-memory data.
pub fn train_stage_on(
    cfg: &StageConfig,
    sources: &[DataSource],
    priors: &Priors,
    opts: &TrainOptions,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let sources = patch_sources(cfg, sources)?;
    if sources.iter().all(|s| s.pairs.is_empty() || s.weight == 0.0) {
        return Err(Error::invalid(format!("stage {} has no training samples", cfg.stage)));
    }
    let runner = StageRunner::new(cfg, priors)?;
    let spec = cfg.network_spec();
    let mut net = match &opts.resume {
        Some(ckpt) => {
            if ckpt.kind() != spec.kind {
                return Err(Error::invalid(format!("cannot resume stage {} from a {} checkpoint", cfg.stage, ckpt.kind())));
            }
            ckpt.ensure_criterion(&spec.fusion.criterion())?;
            let net = Network::from_checkpoint(ckpt)?;
            if net.spec() != &spec {
                return Err(Error::Config("resumed checkpoint was trained with a different model configuration".into()));
            }
            net
        }
        None => instantiate(spec, cfg.seed)?,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net.params)?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut log = TrainLog::default();
    let limit = cfg.max_steps.unwrap_or(u64::MAX);
    'epochs: for epoch in net.header.epochs..cfg.epochs {
        let order = epoch_samples(&sources, cfg.seed, epoch as usize);
        for chunk in order.chunks(cfg.batch_size) {
            if net.header.steps >= limit {
                break 'epochs;
            }
            let picked: Vec<ImagePair> = chunk.iter().map(|&(s, i)| sources[s].pairs[i].clone()).collect();
            let batch_seed = cfg.seed ^ net.header.steps.wrapping_mul(0x2545_F491_4F6C_DD1D);
            let batch = augment(&picked, cfg.augmentation, batch_seed, epoch as usize);
            let refs: Vec<&ImagePair> = batch.iter().collect();

            let p = net.params.bind(Mode::Train);
            let (loss, report) = runner.batch_loss(&net, &p, &refs)?;
            let mut grads = loss.backward();
            let grads = p.gradients(&mut grads);
            drop(p);
            gradient_step(&mut net.params, &grads, &mut opt)?;
            net.header.steps += 1;
            log.push(LogRow::new(net.header.steps, cfg.stage, epoch, &report));
            ::log::debug!("{} step {} loss {:.6}", cfg.stage, net.header.steps, report.total);
        }
        net.header.epochs = epoch + 1;
        if let Some(dir) = &opts.out_dir {
            save_checkpoint(&net.to_checkpoint(), &epoch_checkpoint_path(dir, cfg.stage, epoch + 1))?;
        }
    }

    priors.verify()?;
    let checkpoint = net.to_checkpoint();
    if let Some(dir) = &opts.out_dir {
        let path = final_checkpoint_path(dir, cfg.stage);
        save_checkpoint(&checkpoint, &path)?;
        log.checkpoint = Some(path);
        log.write_csv(&dir.join(format!("{}_log.csv", cfg.stage)))?;
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(StageOutcome { checkpoint, log })
}

pub fn final_checkpoint_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{stage}.ckpt"))
}

pub fn epoch_checkpoint_path(dir: &Path, stage: Stage, epoch: u64) -> PathBuf {
    dir.join(format!("{stage}_epoch{epoch}.ckpt"))
}
