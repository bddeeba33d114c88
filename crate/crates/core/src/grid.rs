//! Row-major 2D arrays and the resampling primitives shared by the
//! preprocessing and test-time augmentation code.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().copied().map(f).collect() }
    }

    /// Copy of the `height`x`width` block whose top-left corner is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
        if row0 + height > self.rows || col0 + width > self.cols {
            return Err(Error::InvalidWindow(alloc::format!(
                "{height}x{width} at ({row0},{col0}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(Grid::from_fn(height, width, |r, c| self.get(row0 + r, col0 + c)))
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Grid::from_fn(self.rows, self.cols, |r, c| self.get(r, self.cols - 1 - c))
    }

    /// Nearest-neighbour resampling with pixel-centre alignment.
    pub fn resize_nearest(&self, rows: usize, cols: usize) -> Self {
        let sy = self.rows as f64 / rows as f64;
        let sx = self.cols as f64 / cols as f64;
        Grid::from_fn(rows, cols, |r, c| {
            let y = (((r as f64 + 0.5) * sy) as usize).min(self.rows - 1);
            let x = (((c as f64 + 0.5) * sx) as usize).min(self.cols - 1);
            self.get(y, x)
        })
    }

    /// Nearest-neighbour rotation by `degrees` counter-clockwise about the
    /// image centre; pixels mapping outside the source take `fill`.
    pub fn rotate_nearest(&self, degrees: f64, fill: T) -> Self {
        if degrees == 0.0 {
            return self.clone();
        }
        let rot = Rotation::new(self.rows, self.cols, degrees);
        Grid::from_fn(self.rows, self.cols, |r, c| {
            let (y, x) = rot.source(r, c);
            let (yi, xi) = (libm::round(y), libm::round(x));
            if yi < 0.0 || xi < 0.0 || yi > (self.rows - 1) as f64 || xi > (self.cols - 1) as f64 {
                fill
            } else {
                self.get(yi as usize, xi as usize)
            }
        })
    }
}

/// Real-valued sample types the interpolating resamplers operate on.
pub trait Sample: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Sample for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Sample for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // exact when a == b, so constant images stay constant
    a + (b - a) * t
}

impl<T: Sample> Grid<T> {
    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, rows: usize, cols: usize) -> Self {
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        let ys: Vec<(usize, usize, f64)> = axis_taps(self.rows, rows);
        let xs: Vec<(usize, usize, f64)> = axis_taps(self.cols, cols);
        Grid::from_fn(rows, cols, |r, c| {
            let (y0, y1, ty) = ys[r];
            let (x0, x1, tx) = xs[c];
            let top = lerp(self.get(y0, x0).to_f64(), self.get(y0, x1).to_f64(), tx);
            let bottom = lerp(self.get(y1, x0).to_f64(), self.get(y1, x1).to_f64(), tx);
            T::from_f64(lerp(top, bottom, ty))
        })
    }

    /// Bilinear rotation by `degrees` counter-clockwise about the image
    /// centre. Samples outside the source read as `fill`. A zero angle
    /// returns an exact copy.
    pub fn rotate_bilinear(&self, degrees: f64, fill: T) -> Self {
        if degrees == 0.0 {
            return self.clone();
        }
        let rot = Rotation::new(self.rows, self.cols, degrees);
        let fill = fill.to_f64();
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= self.rows as isize || x >= self.cols as isize {
                fill
            } else {
                self.get(y as usize, x as usize).to_f64()
            }
        };
        Grid::from_fn(self.rows, self.cols, |r, c| {
            let (y, x) = rot.source(r, c);
            let (fy, fx) = (libm::floor(y), libm::floor(x));
            let (ty, tx) = (y - fy, x - fx);
            let (y0, x0) = (fy as isize, fx as isize);
            let top = lerp(at(y0, x0), at(y0, x0 + 1), tx);
            let bottom = lerp(at(y0 + 1, x0), at(y0 + 1, x0 + 1), tx);
            T::from_f64(lerp(top, bottom, ty))
        })
    }
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Inverse mapping for a rotation about the grid centre.
struct Rotation {
    cy: f64,
    cx: f64,
    cos: f64,
    sin: f64,
}

impl Rotation {
    fn new(rows: usize, cols: usize, degrees: f64) -> Self {
        let rad = degrees.to_radians();
        Rotation {
            cy: (rows as f64 - 1.0) / 2.0,
            cx: (cols as f64 - 1.0) / 2.0,
            cos: libm::cos(rad),
            sin: libm::sin(rad),
        }
    }

    /// Source coordinate that lands on output pixel `(r, c)`.
    #[inline]
    fn source(&self, r: usize, c: usize) -> (f64, f64) {
        // rows grow downward, so a counter-clockwise turn on screen maps
        // output (dy, dx) back through the clockwise rotation
        let dy = r as f64 - self.cy;
        let dx = c as f64 - self.cx;
        let x = self.cos * dx - self.sin * dy;
        let y = self.sin * dx + self.cos * dy;
        (y + self.cy, x + self.cx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_resize_keeps_constants_exact() {
        let g = Grid::filled(37, 53, 0.3137_f64);
        let r = g.resize_bilinear(128, 128);
        assert!(r.as_slice().iter().all(|&v| v == 0.3137));
        let d = g.resize_bilinear(8, 11);
        assert!(d.as_slice().iter().all(|&v| v == 0.3137));
    }

    #[test]
    fn bilinear_upsample_of_ramp_is_linear_inside() {
        let g = Grid::from_fn(4, 4, |_, c| c as f64);
        let u = g.resize_bilinear(4, 8);
        // output centre 3 maps to source 1.25
        assert!((u.get(0, 3) - 1.25).abs() < 1e-12);
        assert_eq!(u.get(0, 0), 0.0);
        assert_eq!(u.get(0, 7), 3.0);
    }

    #[test]
    fn nearest_resize_downsample_picks_block_members() {
        let g = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as u8);
        let d = g.resize_nearest(2, 2);
        assert_eq!(d.as_slice(), &[5, 7, 13, 15]);
    }

    #[test]
    fn rotation_by_zero_is_identity_and_full_turn_is_close() {
        let g = Grid::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f64);
        assert_eq!(g.rotate_bilinear(0.0, 0.0), g);
        let q = g.rotate_bilinear(90.0, 0.0);
        // a quarter turn on an even grid maps pixel centres onto pixel centres
        for r in 0..16 {
            for c in 0..16 {
                assert!((q.get(r, c) - g.get(c, 15 - r)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_back_and_forth_recovers_interior() {
        let g = Grid::from_fn(32, 32, |r, c| {
            let dy = r as f64 - 15.5;
            let dx = c as f64 - 15.5;
            libm::exp(-(dy * dy + dx * dx) / 60.0)
        });
        let back = g.rotate_bilinear(33.0, 0.0).rotate_bilinear(-33.0, 0.0);
        assert!((back.get(16, 16) - g.get(16, 16)).abs() < 0.02);
    }

    #[test]
    fn flip_twice_is_identity() {
        let g = Grid::from_fn(5, 6, |r, c| r * 10 + c);
        assert_eq!(g.flip_horizontal().get(0, 0), 5);
        assert_eq!(g.flip_horizontal().flip_horizontal(), g);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let g = Grid::filled(10, 10, 0u8);
        assert!(g.crop(5, 5, 5, 5).is_ok());
        assert!(g.crop(6, 5, 5, 5).is_err());
    }
}
