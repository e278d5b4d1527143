//! Minimal bar charts written as PNG.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::report::{MetricReport, METRIC_COLUMNS};
use crate::error::{Error, Result};

const BAR_WIDTH: u32 = 24;
const GAP: u32 = 8;
const HEIGHT: u32 = 200;
const MARGIN: u32 = 10;
const PALETTE: [[u8; 3]; 6] =
    [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

/// Bars scaled to the largest absolute value; negative values hang below
/// the axis.
pub fn bar_chart(values: &[f64]) -> Result<RgbImage> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bar chart needs at least one finite value"));
    }
    let n = values.len() as u32;
    let width = 2 * MARGIN + n * BAR_WIDTH + (n - 1) * GAP;
    let mut img = RgbImage::from_pixel(width, HEIGHT + 2 * MARGIN, Rgb([255, 255, 255]));
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let has_negative = values.iter().any(|v| *v < 0.0);
    let axis = if has_negative { MARGIN + HEIGHT / 2 } else { MARGIN + HEIGHT };
    let span = if has_negative { HEIGHT / 2 } else { HEIGHT } as f64;
    for (i, &v) in values.iter().enumerate() {
        let len = if peak > 0.0 { (v.abs() / peak * span).round() as u32 } else { 0 };
        let (y0, y1) = if v >= 0.0 { (axis - len, axis) } else { (axis, axis + len) };
        let x0 = MARGIN + i as u32 * (BAR_WIDTH + GAP);
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for y in y0..y1 {
            for x in x0..x0 + BAR_WIDTH {
                img.put_pixel(x, y, color);
            }
        }
    }
    for x in MARGIN / 2..width - MARGIN / 2 {
        img.put_pixel(x, axis, Rgb([0, 0, 0]));
    }
    Ok(img)
}

/// One chart per metric column; each bar is the mean of one report.
/// Returns the written paths.
pub fn write_metric_charts(reports: &[&MetricReport], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let means: Vec<[f64; 9]> = reports.iter().map(|r| r.means()).collect();
    let mut paths = Vec::new();
    for (c, name) in METRIC_COLUMNS.iter().enumerate() {
        let values: Vec<f64> = means.iter().map(|m| m[c]).collect();
        let path = dir.join(format!("{name}.png"));
        bar_chart(&values)?.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One chart per metric column; each bar is one row of the report.
pub fn write_row_charts(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (c, name) in METRIC_COLUMNS.iter().enumerate() {
        let values: Vec<f64> = report.rows.iter().map(|r| r.values()[c]).collect();
        let path = dir.join(format!("{name}.png"));
        bar_chart(&values)?.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tallest_bar_spans_the_plot() {
        let img = bar_chart(&[1.0, 0.5]).unwrap();
        let x = MARGIN + 1;
        assert_eq!(*img.get_pixel(x, MARGIN), Rgb(PALETTE[0]));
        let x2 = MARGIN + BAR_WIDTH + GAP + 1;
        assert_eq!(*img.get_pixel(x2, MARGIN + HEIGHT / 2 - 1), Rgb([255, 255, 255]));
        assert_eq!(*img.get_pixel(x2, MARGIN + HEIGHT / 2), Rgb(PALETTE[1]));
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(bar_chart(&[]).is_err());
        assert!(bar_chart(&[f64::NAN]).is_err());
    }
}
