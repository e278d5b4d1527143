//! Per-step loss records.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::losses::{LossReport, TaskTag};
use crate::networks::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub stage: Stage,
    pub epoch: u64,
    pub task: TaskTag,
    pub ssim: f64,
    pub psnr: f64,
    pub perceptual: f64,
    pub mse: f64,
    pub total: f64,
}

impl LogRow {
    pub fn new(step: u64, stage: Stage, epoch: u64, report: &LossReport) -> Self {
        let t = report.terms;
        Self {
            step,
            stage,
            epoch,
            task: report.tag,
            ssim: t.ssim,
            psnr: t.psnr,
            perceptual: t.perceptual,
            mse: t.mse,
            total: report.total,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub wall_clock_secs: f64,
    /// Path of the final checkpoint, when one was written.
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainLog {
    pub fn push(&mut self, row: LogRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.step < row.step));
        self.rows.push(row);
    }

    pub fn first_total(&self) -> Option<f64> {
        self.rows.first().map(|r| r.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.rows.last().map(|r| r.total)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["step", "stage", "epoch", "task", "ssim", "psnr", "perceptual", "mse", "total"])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}
