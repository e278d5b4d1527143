//! Per-pair metric rows and dataset summaries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quality::{average_gradient, entropy, vif};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::{psnr_db, ssim, SsimParams};

/// VIF variant reported in summaries.
pub const VIF_DOMAIN: &str = "pixel";

/// Numeric columns of a report row, in CSV order.
pub const METRIC_COLUMNS: [&str; 9] =
    ["ag", "entropy", "ssim_a", "ssim_b", "ssim_mean", "vif_a", "vif_b", "psnr_a", "psnr_b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    pub pair: String,
    pub ag: f64,
    pub entropy: f64,
    pub ssim_a: f64,
    pub ssim_b: f64,
    pub ssim_mean: f64,
    pub vif_a: f64,
    pub vif_b: f64,
    pub psnr_a: f64,
    pub psnr_b: f64,
    /// Reserved for externally computed blur metrics.
    pub cpbd: Option<f64>,
    pub jnb: Option<f64>,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 9] {
        [self.ag, self.entropy, self.ssim_a, self.ssim_b, self.ssim_mean, self.vif_a, self.vif_b, self.psnr_a, self.psnr_b]
    }
}

fn mse(x: &Image, y: &Image) -> f64 {
    x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.pixels().len() as f64
}

/// All metrics of one fused image against its two sources.
pub fn evaluate_pair(fused: &Image, src_a: &Image, src_b: &Image, ssim_params: &SsimParams) -> Result<MetricRow> {
    if fused.dims() != src_a.dims() || fused.dims() != src_b.dims() {
        return Err(Error::shape(format!(
            "fused {:?} and sources {:?}, {:?} differ in size",
            fused.dims(),
            src_a.dims(),
            src_b.dims()
        )));
    }
    let ssim_a = ssim(fused, src_a, ssim_params)?;
    let ssim_b = ssim(fused, src_b, ssim_params)?;
    Ok(MetricRow {
        method: String::new(),
        dataset: String::new(),
        pair: String::new(),
        ag: average_gradient(fused)?,
        entropy: entropy(fused, 256)?,
        ssim_a,
        ssim_b,
        ssim_mean: 0.5 * (ssim_a + ssim_b),
        vif_a: vif(src_a, fused)?,
        vif_b: vif(src_b, fused)?,
        psnr_a: psnr_db(mse(fused, src_a)),
        psnr_b: psnr_db(mse(fused, src_b)),
        cpbd: None,
        jnb: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(method: impl Into<String>, dataset: impl Into<String>) -> Self {
        Self { method: method.into(), dataset: dataset.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, pair: impl Into<String>, mut row: MetricRow) {
        row.method = self.method.clone();
        row.dataset = self.dataset.clone();
        row.pair = pair.into();
        self.rows.push(row);
    }

    /// Column means in [`METRIC_COLUMNS`] order.
    pub fn means(&self) -> [f64; 9] {
        let mut acc = [0.0; 9];
        for r in &self.rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = self.rows.len().max(1) as f64;
        acc.map(|a| a / n)
    }

    pub fn to_csv(&self) -> Result<String> {
        write_rows(&self.rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        let method = rows.first().map(|r| r.method.clone()).unwrap_or_default();
        let dataset = rows.first().map(|r| r.dataset.clone()).unwrap_or_default();
        Ok(Self { method, dataset, rows })
    }
}

fn write_rows(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        let mut header = vec!["method", "dataset", "pair"];
        header.extend(METRIC_COLUMNS);
        header.extend(["cpbd", "jnb"]);
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// One line of means per report, for side-by-side comparison.
pub fn summary_csv(reports: &[&MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method", "dataset", "pairs"];
    header.extend(METRIC_COLUMNS);
    header.push("vif_domain");
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![r.method.clone(), r.dataset.clone(), r.rows.len().to_string()];
        rec.extend(r.means().iter().map(|v| v.to_string()));
        rec.push(VIF_DOMAIN.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
