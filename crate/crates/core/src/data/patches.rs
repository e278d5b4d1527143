use super::pair::ImagePair;
use crate::error::{Error, Result};

/// Number of patches along one axis.
pub fn patches_along(len: usize, patch: usize, stride: usize) -> usize {
    if patch > len || stride == 0 {
        0
    } else {
        (len - patch) / stride + 1
    }
}

/// Cut aligned patches from every image of the pair, row-major order.
pub fn extract_patches(pair: &ImagePair, patch_w: usize, patch_h: usize, stride: usize) -> Result<Vec<ImagePair>> {
    let (w, h) = pair.dims();
    if stride == 0 || patch_w == 0 || patch_h == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if patch_w > w || patch_h > h {
        return Err(Error::invalid(format!("patch {patch_w}x{patch_h} is larger than image {w}x{h}")));
    }
    let nx = patches_along(w, patch_w, stride);
    let ny = patches_along(h, patch_h, stride);
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let (x0, y0) = (ix * stride, iy * stride);
            out.push(pair.map(|img| img.crop(x0, y0, patch_w, patch_h))?);
        }
    }
    Ok(out)
}
