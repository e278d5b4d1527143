use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Two registered sensor modalities; no ground truth.
    CrossModal,
    /// Complementary defocus; carries the all-in-focus ground truth.
    MultiFocus,
    /// `a` is degraded, `b` is the clean target.
    Recon,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::CrossModal => "cross_modal",
            PairKind::MultiFocus => "multi_focus",
            PairKind::Recon => "recon",
        }
    }

    pub fn requires_ground_truth(self) -> bool {
        matches!(self, PairKind::MultiFocus)
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_modal" => Ok(PairKind::CrossModal),
            "multi_focus" => Ok(PairKind::MultiFocus),
            "recon" => Ok(PairKind::Recon),
            other => Err(Error::invalid(format!("unknown pair kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub a: Image,
    pub b: Image,
    /// All-in-focus target for multi-focus pairs.
    pub gt: Option<Image>,
    pub kind: PairKind,
}

impl ImagePair {
    pub fn new(a: Image, b: Image, gt: Option<Image>, kind: PairKind) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(Error::shape(format!("pair images differ in size: {:?} vs {:?}", a.dims(), b.dims())));
        }
        if let Some(g) = &gt {
            if g.dims() != a.dims() {
                return Err(Error::shape(format!("ground truth {:?} vs sources {:?}", g.dims(), a.dims())));
            }
        }
        if gt.is_some() != kind.requires_ground_truth() {
            return Err(Error::invalid(format!("{kind} pairs {} ground truth", if kind.requires_ground_truth() { "require" } else { "take no" })));
        }
        Ok(Self { a, b, gt, kind })
    }

    pub fn cross_modal(a: Image, b: Image) -> Result<Self> {
        Self::new(a, b, None, PairKind::CrossModal)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.a.dims()
    }

    /// Supervised target of the pair, if it has one.
    pub fn target(&self) -> Option<&Image> {
        match self.kind {
            PairKind::CrossModal => None,
            PairKind::MultiFocus => self.gt.as_ref(),
            PairKind::Recon => Some(&self.b),
        }
    }

    pub fn map(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<Self> {
        Ok(Self { a: f(&self.a)?, b: f(&self.b)?, gt: self.gt.as_ref().map(&f).transpose()?, kind: self.kind })
    }
}
