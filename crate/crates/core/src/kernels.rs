//! Convolution kernels: banded im2col + GEMM, forward and backward.
//!
//! The column buffer is built for a band of output rows at a time so peak
//! memory stays bounded for megapixel inputs.

use crate::tensor::{Real, Tensor};

/// Upper bound on column-buffer elements per band.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> Option<Self> {
        if stride == 0 || in_h + 2 * pad < kernel || in_w + 2 * pad < kernel {
            return None;
        }
        let out_h = (in_h + 2 * pad - kernel) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel) / stride + 1;
        Some(Self { cin, cout, kernel, stride, pad, in_h, in_w, out_h, out_w })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.col_rows() * self.out_w).max(1)).clamp(1, self.out_h)
    }

    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.band_rows();
        let out_h = self.out_h;
        (0..out_h).step_by(step).map(move |r0| (r0, (r0 + step).min(out_h)))
    }
}

/// Range of output columns `ox` whose input column `ox*s + kx - pad` is in bounds.
#[inline]
fn valid_cols(g: &ConvGeometry, kx: usize) -> (usize, usize) {
    let (s, p) = (g.stride as isize, g.pad as isize);
    let kx = kx as isize;
    let lo = ((p - kx).max(0) + s - 1) / s;
    let hi_excl = (g.in_w as isize + p - kx + s - 1) / s;
    let hi = hi_excl.clamp(0, g.out_w as isize);
    (lo.min(hi) as usize, hi as usize)
}

fn im2col<T: Real>(g: &ConvGeometry, x: &[T], r0: usize, r1: usize, col: &mut [T]) {
    let band = (r1 - r0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.cin {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * band..][..band];
                let (lo, hi) = valid_cols(g, kx);
                for oy in r0..r1 {
                    let dst = &mut row[(oy - r0) * g.out_w..][..g.out_w];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..][..g.in_w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad;
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeometry, col: &[T], r0: usize, r1: usize, dx: &mut [T]) {
    let band = (r1 - r0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * band..][..band];
                let (lo, hi) = valid_cols(g, kx);
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &row[(oy - r0) * g.out_w..][..g.out_w];
                    let dst = &mut plane[iy as usize * g.in_w..][..g.in_w];
                    for ox in lo..hi {
                        let ix = ox * g.stride + kx - g.pad;
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w) + b`, with `w` shaped `[cout, cin, k, k]`.
pub fn conv2d_forward<T: Real>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Tensor<T> {
    let n = x.batch();
    let out_plane = g.out_h * g.out_w;
    let kk = g.col_rows();
    let mut y = Tensor::zeros([n, g.cout, g.out_h, g.out_w]);
    let mut col = Vec::new();
    for s in 0..n {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        if g.is_pointwise() {
            T::gemm(g.cout, kk, out_plane, T::one(), w.data(), kk as isize, 1, xs, out_plane as isize, 1, T::zero(), ys, out_plane as isize, 1);
        } else {
            for (r0, r1) in g.bands() {
                let band = (r1 - r0) * g.out_w;
                col.resize(kk * band, T::zero());
                im2col(g, xs, r0, r1, &mut col);
                T::gemm(
                    g.cout,
                    kk,
                    band,
                    T::one(),
                    w.data(),
                    kk as isize,
                    1,
                    &col,
                    band as isize,
                    1,
                    T::zero(),
                    &mut ys[r0 * g.out_w..],
                    out_plane as isize,
                    1,
                );
            }
        }
        if let Some(b) = b {
            for (co, plane) in ys.chunks_mut(out_plane).enumerate() {
                let bias = b.data()[co];
                plane.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
    }
    y
}

/// Gradients of a convolution given the upstream gradient `dy`.
///
/// Each output is computed only when requested.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let n = x.batch();
    let out_plane = g.out_h * g.out_w;
    let kk = g.col_rows();
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dw.then(|| Tensor::zeros(w.shape()));
    let db = want_db.then(|| {
        let mut db = Tensor::zeros([1, g.cout, 1, 1]);
        for s in 0..n {
            for (co, plane) in dy.sample(s).chunks(out_plane).enumerate() {
                let acc = &mut db.data_mut()[co];
                *acc = *acc + plane.iter().copied().sum::<T>();
            }
        }
        db
    });
    if !want_dx && !want_dw {
        return (dx, dw, db);
    }
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for s in 0..n {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        if g.is_pointwise() {
            if let Some(dw) = dw.as_mut() {
                T::gemm(g.cout, out_plane, kk, T::one(), dys, out_plane as isize, 1, xs, 1, out_plane as isize, T::one(), dw.data_mut(), kk as isize, 1);
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(kk, g.cout, out_plane, T::one(), w.data(), 1, kk as isize, dys, out_plane as isize, 1, T::zero(), dx.sample_mut(s), out_plane as isize, 1);
            }
            continue;
        }
        for (r0, r1) in g.bands() {
            let band = (r1 - r0) * g.out_w;
            let dy_band = &dys[r0 * g.out_w..];
            if let Some(dw) = dw.as_mut() {
                col.resize(kk * band, T::zero());
                im2col(g, xs, r0, r1, &mut col);
                T::gemm(g.cout, band, kk, T::one(), dy_band, out_plane as isize, 1, &col, 1, band as isize, T::one(), dw.data_mut(), kk as isize, 1);
            }
            if let Some(dx) = dx.as_mut() {
                dcol.resize(kk * band, T::zero());
                T::gemm(kk, g.cout, band, T::one(), w.data(), 1, kk as isize, dy_band, out_plane as isize, 1, T::zero(), &mut dcol, band as isize, 1);
                col2im(g, &dcol, r0, r1, dx.sample_mut(s));
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<T: Real>(g: &ConvGeometry, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
        let mut y = Tensor::zeros([x.batch(), g.cout, g.out_h, g.out_w]);
        for n in 0..x.batch() {
            for co in 0..g.cout {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    acc += x.at(n, ci, iy as usize, ix as usize).as_f64()
                                        * w.at(co, ci, ky, kx).as_f64();
                                }
                            }
                        }
                        let i = y.index(n, co, oy, ox);
                        y.data_mut()[i] = T::from_f64c(acc);
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let len = shape.iter().product::<usize>();
        Tensor::from_vec(shape, (0..len).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.4) * scale).collect()).unwrap()
    }

    #[test]
    fn banded_forward_matches_direct_sum() {
        for &(k, s, p, h, w) in &[(3, 1, 1, 7, 9), (5, 1, 2, 6, 5), (1, 1, 0, 4, 4), (3, 2, 1, 9, 8), (11, 1, 0, 12, 13)] {
            let g = ConvGeometry::new(3, 4, k, s, p, h, w).unwrap();
            let x = ramp([2, 3, h, w], 1.0);
            let wt = ramp([4, 3, k, k], 0.5);
            let fast = conv2d_forward(&g, &x, &wt, None);
            let slow = naive(&g, &x, &wt);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "k={k} s={s}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), dy> == <x, conv^T(dy)> and likewise for the kernel.
        let g = ConvGeometry::new(2, 3, 3, 2, 1, 7, 6).unwrap();
        let x = ramp([2, 2, 7, 6], 1.0);
        let w = ramp([3, 2, 3, 3], 0.7);
        let y = conv2d_forward(&g, &x, &w, None);
        let dy = ramp(y.shape(), 1.3);
        let (dx, dw, _) = conv2d_backward(&g, &x, &w, &dy, true, true, false);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = w.data().iter().zip(dw.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
