//! Tab-separated dataset manifests.
//!
//! ```text
//! # pair_kind=multi_focus
//! a/0000.png	b/0000.png	gt/0000.png
//! ```
//!
//! Paths are relative to the manifest's directory. Lines starting with `#`
//! other than the header are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::image::load_grayscale;
use super::pair::{ImagePair, PairKind};
use crate::error::{Error, Result};

const KIND_PREFIX: &str = "# pair_kind=";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub a: PathBuf,
    pub b: PathBuf,
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub kind: PairKind,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, kind: PairKind) -> Self {
        Self { root: root.into(), kind, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str, root: &Path, source: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Manifest { path: source.to_path_buf(), reason };
        let mut kind = None;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(k) = line.strip_prefix(KIND_PREFIX) {
                kind = Some(k.trim().parse::<PairKind>().map_err(|e| bad(e.to_string()))?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let kind = kind.ok_or_else(|| bad("records before the `# pair_kind=` header".into()))?;
            let expected = if kind.requires_ground_truth() { 3 } else { 2 };
            if fields.len() != expected {
                return Err(bad(format!("line {}: expected {expected} fields for {kind}, found {}", lineno + 1, fields.len())));
            }
            records.push(Record {
                a: PathBuf::from(fields[0]),
                b: PathBuf::from(fields[1]),
                gt: fields.get(2).map(PathBuf::from),
            });
        }
        let kind = kind.ok_or_else(|| bad("missing `# pair_kind=` header".into()))?;
        Ok(Self { root: root.to_path_buf(), kind, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, root, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{KIND_PREFIX}{}\n", self.kind);
        for r in &self.records {
            let _ = write!(s, "{}\t{}", r.a.display(), r.b.display());
            if let Some(gt) = &r.gt {
                let _ = write!(s, "\t{}", gt.display());
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Check that every referenced file exists.
    pub fn verify(&self) -> Result<()> {
        for r in &self.records {
            for p in [Some(&r.a), Some(&r.b), r.gt.as_ref()].into_iter().flatten() {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    pub fn load_pairs(&self) -> Result<Vec<ImagePair>> {
        self.verify()?;
        self.records
            .iter()
            .map(|r| {
                let a = load_grayscale(&self.root.join(&r.a))?;
                let b = load_grayscale(&self.root.join(&r.b))?;
                let gt = r.gt.as_ref().map(|g| load_grayscale(&self.root.join(g))).transpose()?;
                ImagePair::new(a, b, gt, self.kind)
            })
            .collect()
    }
}
