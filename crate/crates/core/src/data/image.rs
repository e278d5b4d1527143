use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Single-channel image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image must have positive size, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// Build from arbitrary values, clipping into `[0, 1]` (non-finite becomes 0).
    pub fn from_clipped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        for v in &mut pixels {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_clipped(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self::new(w, h, pixels)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_mut(self.width) {
            row.reverse();
        }
        Self { pixels, ..*self }
    }

    pub fn flip_vertical(&self) -> Self {
        let pixels = self.pixels.chunks(self.width).rev().flatten().copied().collect();
        Self { pixels, ..*self }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec([1, 1, self.height, self.width], self.pixels.iter().map(|&v| T::from_f64c(v)).collect())
            .expect("image tensor shape")
    }

    /// Batch images of equal size into `[N, 1, H, W]`.
    pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.pixels.len());
        for img in images {
            if img.dims() != first.dims() {
                return Err(Error::shape(format!("batch mixes {:?} and {:?}", first.dims(), img.dims())));
            }
            data.extend(img.pixels.iter().map(|&v| T::from_f64c(v)));
        }
        Tensor::from_vec([images.len(), 1, first.height, first.width], data)
    }

    /// Sample `n` of a single-channel tensor, clipped into `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(format!("expected one channel, got {:?}", t.shape())));
        }
        Self::from_clipped(t.width(), t.height(), t.sample(n).iter().map(|v| v.as_f64()).collect())
    }

    /// 8-bit quantization (round to nearest level).
    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }
}

/// Luminance weighting used for multi-channel inputs.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Load an 8- or 16-bit raster as a grayscale image in `[0, 1]`.
pub fn load_grayscale(path: &Path) -> Result<Image> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroArea(path.to_path_buf()));
    }
    let pixels: Vec<f64> = match &decoded {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => decoded
            .to_rgb16()
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        _ => decoded
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
    };
    Image::from_clipped(w, h, pixels)
}

/// Save as 8-bit grayscale; the format follows the extension (PNG or PGM).
pub fn save_grayscale(img: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let buf = img.to_luma8();
    let is_pgm = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        buf.save_with_format(path, image::ImageFormat::Pnm)?;
    } else {
        buf.save_with_format(path, image::ImageFormat::Png)?;
    }
    Ok(())
}
