//! im2col + GEMM convolution kernels over NHWC activations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Padding, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (n, h, w, cin) = match *x {
            [n, h, w, c] => (n, h, w, c),
            _ => return Err(Error::ShapeMismatch(format!("conv input {x:?} is not NHWC"))),
        };
        let (k, cout) = match *kernel {
            [k1, k2, ci, co] if k1 == k2 && ci == cin => (k1, co),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {kernel:?} does not match input channels {cin}"
                )))
            }
        };
        if stride == 0 {
            return Err(Error::ShapeMismatch("stride must be positive".into()));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let ph = ((oh - 1) * stride + k).saturating_sub(h);
                let pw = ((ow - 1) * stride + k).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if h < k || w < k {
                    return Err(Error::ShapeMismatch(format!("{h}x{w} input smaller than {k}x{k} kernel")));
                }
                ((h - k) / stride + 1, (w - k) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeom { n, h, w, cin, k, cout, stride, pad_top, pad_left, oh, ow })
    }

    #[inline]
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    #[inline]
    fn pixels_out(&self) -> usize {
        self.oh * self.ow
    }

    /// Pointwise convolutions read the input directly as the column matrix.
    #[inline]
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let (k, cin, patch) = (self.k, self.cin, self.patch());
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut col[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        let dst = &mut row[(ky * k + kx) * cin..][..cin];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(T::ZERO);
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * cin;
                            dst.copy_from_slice(&x[src..src + cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let (k, cin, patch) = (self.k, self.cin, self.patch());
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &col[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * self.w + ix as usize) * cin;
                        for (d, &s) in dx[dst..dst + cin].iter_mut().zip(&row[(ky * k + kx) * cin..][..cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(x: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let (m, kk, n) = (g.pixels_out(), g.patch(), g.cout);
    let in_len = g.h * g.w * g.cin;
    let mut out = vec![T::ZERO; g.n * m * n];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::ZERO; m * kk] };
    for s in 0..g.n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let a: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        let c = &mut out[s * m * n..(s + 1) * m * n];
        T::gemm(m, kk, n, T::ONE, a, (kk as isize, 1), kernel, (n as isize, 1), T::ZERO, c, (n as isize, 1));
    }
    out
}

/// Gradients with respect to the input (when requested) and the kernel.
pub(crate) fn backward<T: Real>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &ConvGeom,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (m, kk, n) = (g.pixels_out(), g.patch(), g.cout);
    let in_len = g.h * g.w * g.cin;
    let mut dkernel = vec![T::ZERO; kk * n];
    let mut dx = if want_dx { Some(vec![T::ZERO; g.n * in_len]) } else { None };
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::ZERO; m * kk] };
    let mut dcol = if pointwise || !want_dx { Vec::new() } else { vec![T::ZERO; m * kk] };
    for s in 0..g.n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let dys = &dy[s * m * n..(s + 1) * m * n];
        let a: &[T] = if pointwise {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        // dK += colᵀ · dY
        T::gemm(kk, m, n, T::ONE, a, (1, kk as isize), dys, (n as isize, 1), T::ONE, &mut dkernel, (n as isize, 1));
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            // dcol = dY · Kᵀ
            if pointwise {
                T::gemm(m, n, kk, T::ONE, dys, (n as isize, 1), kernel, (1, n as isize), T::ZERO, dxs, (kk as isize, 1));
            } else {
                T::gemm(m, n, kk, T::ONE, dys, (n as isize, 1), kernel, (1, n as isize), T::ZERO, &mut dcol, (kk as isize, 1));
                g.col2im(&dcol, dxs);
            }
        }
    }
    (dx, dkernel)
}
