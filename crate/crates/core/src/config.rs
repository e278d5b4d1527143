//! Run configuration: one TOML document with a default for every field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, DegradationSpec};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SsimParams, DEFAULT_PSNR_CAP_DB};
use crate::networks::{FusionConfig, ModelConfig, Stage};
use crate::training::{ManifestSource, OptimizerKind, StageConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub augmentation: Augmentation,
    pub degradation: DegradationSpec,
    /// Size of generated synthetic scenes.
    pub scene_width: usize,
    pub scene_height: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { augmentation: Augmentation::default(), degradation: DegradationSpec::default(), scene_width: 80, scene_height: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub ssim: f64,
    pub psnr: f64,
    pub perceptual: f64,
    pub mse: f64,
    pub psnr_cap_db: f64,
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            ssim: w.ssim,
            psnr: w.psnr,
            perceptual: w.perceptual,
            mse: w.mse,
            psnr_cap_db: DEFAULT_PSNR_CAP_DB,
            ssim_window: SsimParams::default().window,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { ssim: self.ssim, psnr: self.psnr, perceptual: self.perceptual, mse: self.mse }
    }
}

/// Per-stage settings; unset fields fall back to the stage's reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub manifests: Vec<ManifestSource>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<u64>,
    pub max_steps: Option<u64>,
    pub patch_width: Option<usize>,
    pub patch_height: Option<usize>,
    pub patch_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Output directory for checkpoints and logs.
    pub out_dir: PathBuf,
    pub subtask1: StageSection,
    pub subtask2: StageSection,
    pub main: StageSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            optimizer: OptimizerKind::Adam,
            out_dir: PathBuf::from("runs"),
            subtask1: StageSection::default(),
            subtask2: StageSection::default(),
            main: StageSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ssim_window: usize,
    pub method: String,
    pub dataset: String,
    /// Pairs scored by `ablate`; falls back to the first main-stage manifest.
    pub manifest: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ssim_window: SsimParams::default().window, method: "auxfuse".into(), dataset: "eval".into(), manifest: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A parsed configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, text })
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.data.degradation.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.fusion.criterion().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.loss.ssim_window.is_multiple_of(2) || self.eval.ssim_window.is_multiple_of(2) {
            return Err(Error::Config("SSIM windows must be odd".into()));
        }
        if self.model.width == 0 || self.model.attention_ratio == 0 || !self.model.width.is_multiple_of(self.model.attention_ratio) {
            return Err(Error::Config(format!(
                "model.width {} must be a positive multiple of model.attention_ratio {}",
                self.model.width, self.model.attention_ratio
            )));
        }
        Ok(())
    }

    /// Resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.train.out_dir)
    }

    pub fn section(&self, stage: Stage) -> &StageSection {
        match stage {
            Stage::Subtask1 => &self.train.subtask1,
            Stage::Subtask2 => &self.train.subtask2,
            Stage::Main => &self.train.main,
        }
    }

    pub fn section_mut(&mut self, stage: Stage) -> &mut StageSection {
        match stage {
            Stage::Subtask1 => &mut self.train.subtask1,
            Stage::Subtask2 => &mut self.train.subtask2,
            Stage::Main => &mut self.train.main,
        }
    }

    /// Manifest used to score ablation variants.
    pub fn eval_manifest(&self) -> Option<PathBuf> {
        self.eval
            .manifest
            .as_ref()
            .or_else(|| self.train.main.manifests.first().map(|m| &m.path))
            .map(|p| self.resolve(p))
    }

    pub fn ssim_params(&self) -> SsimParams {
        SsimParams::with_window(self.loss.ssim_window)
    }

    pub fn stage_config(&self, stage: Stage) -> StageConfig {
        let d = StageConfig::defaults(stage);
        let s = self.section(stage);
        StageConfig {
            stage,
            learning_rate: s.learning_rate.unwrap_or(d.learning_rate),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            epochs: s.epochs.unwrap_or(d.epochs),
            max_steps: s.max_steps.or(d.max_steps),
            patch_width: s.patch_width.unwrap_or(d.patch_width),
            patch_height: s.patch_height.unwrap_or(d.patch_height),
            patch_stride: s.patch_stride.or(d.patch_stride),
            seed: self.train.seed,
            manifests: s
                .manifests
                .iter()
                .map(|m| ManifestSource { path: self.resolve(&m.path), weight: m.weight })
                .collect(),
            loss: self.loss.weights(),
            ssim: self.ssim_params(),
            psnr_cap_db: self.loss.psnr_cap_db,
            optimizer: self.train.optimizer,
            augmentation: self.data.augmentation,
            model: self.model,
            fusion: self.fusion,
        }
    }
}
