//! Self-describing checkpoint files.
//!
//! A text header of `key=value` lines and one `tensor <name> <d0,d1,d2,d3>`
//! line per parameter, terminated by `end`, followed by the raw tensors as
//! little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{instantiate, FusionConfig, LateralConfig, ModelConfig, Network, NetworkHeader, NetworkKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionCriterion;
use crate::nn::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &str = "AUXFUSE-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Persisted network state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: NetworkHeader,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn kind(&self) -> NetworkKind {
        self.header.spec.kind
    }

    pub fn criterion(&self) -> FusionCriterion {
        self.header.spec.fusion.criterion()
    }

    /// Reject a checkpoint whose fusion criterion differs from `expected`.
    pub fn ensure_criterion(&self, expected: &FusionCriterion) -> Result<()> {
        if self.kind().is_fusion() && self.criterion() != *expected {
            return Err(Error::CriterionMismatch { found: self.criterion().to_string(), expected: expected.to_string() });
        }
        Ok(())
    }

    /// SHA-256 of the parameter payload, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, p) in self.params.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = &self.header.spec;
        let mut text = format!("{CHECKPOINT_MAGIC}\nversion={CHECKPOINT_VERSION}\n");
        let mut kv = |k: &str, v: String| text += &format!("{k}={v}\n");
        kv("kind", spec.kind.to_string());
        kv("stage", spec.kind.stage().to_string());
        kv("criterion", spec.fusion.criterion().to_string());
        kv("seed", self.header.seed.to_string());
        kv("steps", self.header.steps.to_string());
        kv("epochs", self.header.epochs.to_string());
        kv("width", spec.model.width.to_string());
        kv("attention_ratio", spec.model.attention_ratio.to_string());
        kv("bias", spec.model.bias.to_string());
        kv("share_branches", spec.model.share_branches.to_string());
        kv("lateral_subtask1", spec.model.laterals.from_subtask1.to_string());
        kv("lateral_subtask2", spec.model.laterals.from_subtask2.to_string());
        kv("normalize_weights", spec.fusion.normalize.to_string());
        kv("norm_eps", format!("{:e}", spec.fusion.eps));
        kv("tensors", self.params.len().to_string());
        for (_, p) in self.params.iter() {
            let s = p.value.shape();
            text += &format!("tensor {} {},{},{},{}\n", p.name, s[0], s[1], s[2], s[3]);
        }
        text += "end\n";
        let mut bytes = text.into_bytes();
        for (_, p) in self.params.iter() {
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let mut lines = Vec::new();
        let mut pos = 0;
        loop {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&c| c == b'\n').ok_or_else(|| corrupt("header is not terminated".into()))?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("header is not text".into()))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(CHECKPOINT_MAGIC) {
            return Err(corrupt("missing magic line".into()));
        }
        let mut fields = BTreeMap::new();
        let mut tensors: Vec<(String, Shape)> = Vec::new();
        for line in &lines[1..] {
            if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest.rsplit_once(' ').ok_or_else(|| corrupt(format!("bad tensor line `{line}`")))?;
                let dims: Vec<usize> = dims
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| corrupt(format!("bad tensor shape `{line}`")))?;
                let shape: Shape = dims.try_into().map_err(|_| corrupt(format!("tensor `{name}` is not rank 4")))?;
                tensors.push((name.to_string(), shape));
            } else {
                let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("bad header line `{line}`")))?;
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| corrupt(format!("missing header field `{k}`")));
        let version = get("version")?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::CheckpointVersion { found: version.to_string(), expected: CHECKPOINT_VERSION });
        }
        fn parse<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| Error::CorruptCheckpoint(format!("header field `{k}` has bad value `{v}`")))
        }
        let field = |k: &str| -> Result<&str> { get(k) };
        let kind: NetworkKind = field("kind")?.parse().map_err(|_| corrupt("unknown network kind".into()))?;
        if field("stage")? != kind.stage().as_str() {
            return Err(corrupt(format!("stage tag `{}` does not match kind {kind}", field("stage")?)));
        }
        let criterion: FusionCriterion = field("criterion")?.parse().map_err(|_| corrupt("bad criterion tag".into()))?;
        let model = ModelConfig {
            width: parse("width", field("width")?)?,
            attention_ratio: parse("attention_ratio", field("attention_ratio")?)?,
            bias: parse("bias", field("bias")?)?,
            share_branches: parse("share_branches", field("share_branches")?)?,
            laterals: LateralConfig {
                from_subtask1: parse("lateral_subtask1", field("lateral_subtask1")?)?,
                from_subtask2: parse("lateral_subtask2", field("lateral_subtask2")?)?,
            },
        };
        let fusion = FusionConfig {
            normalize: parse("normalize_weights", field("normalize_weights")?)?,
            eps: parse("norm_eps", field("norm_eps")?)?,
            ..FusionConfig::default()
        }
        .with_criterion(criterion);
        let header = NetworkHeader {
            spec: NetworkSpec { kind, model, fusion },
            seed: parse("seed", field("seed")?)?,
            steps: parse("steps", field("steps")?)?,
            epochs: parse("epochs", field("epochs")?)?,
        };
        let count: usize = parse("tensors", field("tensors")?)?;
        if count != tensors.len() {
            return Err(corrupt(format!("header declares {count} tensors but lists {}", tensors.len())));
        }

        // The shape table must be exactly what the declared architecture builds.
        let mut params = instantiate(header.spec, header.seed)
            .map_err(|e| corrupt(format!("header describes an invalid network: {e}")))?
            .params;
        if params.len() != tensors.len() {
            return Err(corrupt(format!("{} tensors listed, {} expected for {kind}", tensors.len(), params.len())));
        }
        let payload = &bytes[pos..];
        let expected: usize = tensors.iter().map(|(_, s)| s.iter().product::<usize>() * 4).sum();
        if payload.len() != expected {
            return Err(corrupt(format!("payload is {} bytes, header requires {expected}", payload.len())));
        }
        let mut offset = 0;
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (id, (name, shape)) in ids.into_iter().zip(&tensors) {
            let p = params.get(id);
            if p.name != *name || p.value.shape() != *shape {
                return Err(corrupt(format!(
                    "tensor `{name}` {shape:?} does not match architecture entry `{}` {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            let n: usize = shape.iter().product();
            let data: Vec<f32> = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor `{name}` holds non-finite values")));
            }
            *params.tensor_mut(id) = Tensor::from_vec(*shape, data)?;
        }
        Ok(Checkpoint { header, params })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&fs::read(path)?)
}

impl Network<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = self.params.clone();
        params.set_frozen(false);
        Checkpoint { header: self.header, params }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut net = instantiate(ckpt.header.spec, ckpt.header.seed)?;
        net.params.load_from(&ckpt.params)?;
        net.header = ckpt.header;
        Ok(net)
    }
}
