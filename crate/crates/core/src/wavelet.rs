//! Single-level 2D discrete wavelet analysis/synthesis and the repeated
//! low-pass chain used for the approximation feature channels.
//!
//! The default wavelet is orthonormal Haar, evaluated with the closed-form
//! 2x2 block formulas so that dyadic inputs produce exact results. Any other
//! orthonormal filter pair runs through a periodized filter bank.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// The four half-resolution subbands of one analysis step.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub approx: Grid<f64>,
    /// Low-pass along rows, high-pass down columns.
    pub detail_h: Grid<f64>,
    /// High-pass along rows, low-pass down columns.
    pub detail_v: Grid<f64>,
    pub detail_d: Grid<f64>,
}

impl Subbands {
    pub fn dims(&self) -> (usize, usize) {
        (self.approx.rows(), self.approx.cols())
    }

    fn check(&self) -> Result<(usize, usize)> {
        let d = self.dims();
        for (name, g) in [("detail_h", &self.detail_h), ("detail_v", &self.detail_v), ("detail_d", &self.detail_d)] {
            if (g.rows(), g.cols()) != d {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, approx is {}x{}",
                    g.rows(),
                    g.cols(),
                    d.0,
                    d.1
                )));
            }
        }
        Ok(d)
    }

    pub fn energy(&self) -> f64 {
        [&self.approx, &self.detail_h, &self.detail_v, &self.detail_d]
            .iter()
            .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// Orthonormal two-channel analysis filters. The high-pass filter is the
/// quadrature mirror of the low-pass one.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl FilterBank {
    pub fn from_lowpass(lowpass: Vec<f64>) -> Result<Self> {
        if lowpass.len() < 2 || !lowpass.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "filter length {} must be even and at least 2",
                lowpass.len()
            )));
        }
        let n = lowpass.len();
        let highpass = (0..n)
            .map(|k| if k % 2 == 0 { lowpass[n - 1 - k] } else { -lowpass[n - 1 - k] })
            .collect();
        Ok(FilterBank { lowpass, highpass })
    }

    pub fn haar() -> Self {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        FilterBank::from_lowpass(vec![s, s]).expect("valid haar filter")
    }

    /// Four-tap Daubechies filter.
    pub fn daubechies2() -> Self {
        let s3 = libm::sqrt(3.0);
        let d = 4.0 * core::f64::consts::SQRT_2;
        FilterBank::from_lowpass(vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d])
            .expect("valid db2 filter")
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }

    fn analyze(&self, x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let n = x.len();
        for i in 0..n / 2 {
            let (mut a, mut d) = (0.0, 0.0);
            for k in 0..self.lowpass.len() {
                let v = x[(2 * i + k) % n];
                a += self.lowpass[k] * v;
                d += self.highpass[k] * v;
            }
            lo[i] = a;
            hi[i] = d;
        }
    }

    fn synthesize(&self, lo: &[f64], hi: &[f64], x: &mut [f64]) {
        let n = x.len();
        x.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n / 2 {
            for k in 0..self.lowpass.len() {
                x[(2 * i + k) % n] += self.lowpass[k] * lo[i] + self.highpass[k] * hi[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Wavelet {
    #[default]
    Haar,
    Filters(FilterBank),
}

impl Wavelet {
    pub fn dwt2(&self, image: &Grid<f64>) -> Result<Subbands> {
        let (rows, cols) = (image.rows(), image.cols());
        if rows % 2 != 0 || cols % 2 != 0 || rows == 0 || cols == 0 {
            return Err(Error::OddDimension { rows, cols });
        }
        match self {
            Wavelet::Haar => Ok(haar_forward(image)),
            Wavelet::Filters(bank) => {
                if rows < bank.len() || cols < bank.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{rows}x{cols} image is shorter than the {}-tap filter",
                        bank.len()
                    )));
                }
                Ok(bank_forward(bank, image))
            }
        }
    }

    pub fn idwt2(&self, sub: &Subbands) -> Result<Grid<f64>> {
        sub.check()?;
        match self {
            Wavelet::Haar => Ok(haar_inverse(sub)),
            Wavelet::Filters(bank) => Ok(bank_inverse(bank, sub)),
        }
    }

    /// Successive approximations: element `k` is the low-pass band after
    /// `k + 1` analysis steps, each applied to the previous approximation.
    pub fn approx_chain(&self, image: &Grid<f64>, levels: u32) -> Result<Vec<Grid<f64>>> {
        let (rows, cols) = (image.rows(), image.cols());
        if levels == 0 {
            return Err(Error::NotDivisible { rows, cols, levels });
        }
        let step = 1usize << levels;
        if rows == 0 || cols == 0 || rows % step != 0 || cols % step != 0 {
            return Err(Error::NotDivisible { rows, cols, levels });
        }
        let mut out = Vec::with_capacity(levels as usize);
        let mut current = image.clone();
        for _ in 0..levels {
            current = self.dwt2(&current)?.approx;
            out.push(current.clone());
        }
        Ok(out)
    }
}

/// Haar analysis with the default wavelet.
pub fn dwt2(image: &Grid<f64>) -> Result<Subbands> {
    Wavelet::Haar.dwt2(image)
}

/// Haar synthesis with the default wavelet.
pub fn idwt2(sub: &Subbands) -> Result<Grid<f64>> {
    Wavelet::Haar.idwt2(sub)
}

/// Haar approximation chain with the default wavelet.
pub fn approx_chain(image: &Grid<f64>, levels: u32) -> Result<Vec<Grid<f64>>> {
    Wavelet::Haar.approx_chain(image, levels)
}

fn haar_forward(image: &Grid<f64>) -> Subbands {
    let (h, w) = (image.rows() / 2, image.cols() / 2);
    let mut approx = Grid::filled(h, w, 0.0);
    let mut detail_h = approx.clone();
    let mut detail_v = approx.clone();
    let mut detail_d = approx.clone();
    for r in 0..h {
        for c in 0..w {
            let a = image.get(2 * r, 2 * c);
            let b = image.get(2 * r, 2 * c + 1);
            let cc = image.get(2 * r + 1, 2 * c);
            let d = image.get(2 * r + 1, 2 * c + 1);
            let (top_sum, bottom_sum) = (a + b, cc + d);
            let (top_diff, bottom_diff) = (a - b, cc - d);
            approx.set(r, c, (top_sum + bottom_sum) / 2.0);
            detail_h.set(r, c, (top_sum - bottom_sum) / 2.0);
            detail_v.set(r, c, (top_diff + bottom_diff) / 2.0);
            detail_d.set(r, c, (top_diff - bottom_diff) / 2.0);
        }
    }
    Subbands { approx, detail_h, detail_v, detail_d }
}

fn haar_inverse(sub: &Subbands) -> Grid<f64> {
    let (h, w) = sub.dims();
    let mut out = Grid::filled(2 * h, 2 * w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let (s, dh, dv, dd) =
                (sub.approx.get(r, c), sub.detail_h.get(r, c), sub.detail_v.get(r, c), sub.detail_d.get(r, c));
            let (top, bottom) = (s + dh, s - dh);
            let (left, right) = (dv + dd, dv - dd);
            out.set(2 * r, 2 * c, (top + left) / 2.0);
            out.set(2 * r, 2 * c + 1, (top - left) / 2.0);
            out.set(2 * r + 1, 2 * c, (bottom + right) / 2.0);
            out.set(2 * r + 1, 2 * c + 1, (bottom - right) / 2.0);
        }
    }
    out
}

fn bank_forward(bank: &FilterBank, image: &Grid<f64>) -> Subbands {
    let (rows, cols) = (image.rows(), image.cols());
    let (h, w) = (rows / 2, cols / 2);
    // rows: [lo | hi] halves per row
    let mut row_lo = vec![0.0; rows * w];
    let mut row_hi = vec![0.0; rows * w];
    for r in 0..rows {
        let x = &image.as_slice()[r * cols..(r + 1) * cols];
        bank.analyze(x, &mut row_lo[r * w..(r + 1) * w], &mut row_hi[r * w..(r + 1) * w]);
    }
    let mut bands = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    let mut col = vec![0.0; rows];
    let (mut lo, mut hi) = (vec![0.0; h], vec![0.0; h]);
    for (src, (low_band, high_band)) in [(&row_lo, (0, 1)), (&row_hi, (2, 3))] {
        for c in 0..w {
            for r in 0..rows {
                col[r] = src[r * w + c];
            }
            bank.analyze(&col, &mut lo, &mut hi);
            for r in 0..h {
                bands[low_band][r * w + c] = lo[r];
                bands[high_band][r * w + c] = hi[r];
            }
        }
    }
    let [approx, detail_h, detail_v, detail_d] = bands.map(|b| Grid::from_vec(h, w, b).expect("band size"));
    Subbands { approx, detail_h, detail_v, detail_d }
}

fn bank_inverse(bank: &FilterBank, sub: &Subbands) -> Grid<f64> {
    let (h, w) = sub.dims();
    let (rows, cols) = (2 * h, 2 * w);
    let mut row_lo = vec![0.0; rows * w];
    let mut row_hi = vec![0.0; rows * w];
    let (mut lo, mut hi) = (vec![0.0; h], vec![0.0; h]);
    let mut col = vec![0.0; rows];
    for (dst, low_band, high_band) in
        [(&mut row_lo, &sub.approx, &sub.detail_h), (&mut row_hi, &sub.detail_v, &sub.detail_d)]
    {
        for c in 0..w {
            for r in 0..h {
                lo[r] = low_band.get(r, c);
                hi[r] = high_band.get(r, c);
            }
            bank.synthesize(&lo, &hi, &mut col);
            for r in 0..rows {
                dst[r * w + c] = col[r];
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        bank.synthesize(
            &row_lo[r * w..(r + 1) * w],
            &row_hi[r * w..(r + 1) * w],
            &mut out[r * cols..(r + 1) * cols],
        );
    }
    Grid::from_vec(rows, cols, out).expect("image size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Grid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn energy(g: &Grid<f64>) -> f64 {
        g.as_slice().iter().map(|v| v * v).sum()
    }

    #[test]
    fn golden_two_by_two() {
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dwt2(&g).unwrap();
        assert_eq!(s.approx.as_slice(), &[5.0]);
        assert_eq!(s.detail_h.as_slice(), &[-2.0]);
        assert_eq!(s.detail_v.as_slice(), &[-1.0]);
        assert_eq!(s.detail_d.as_slice(), &[0.0]);
    }

    #[test]
    fn constant_image_goes_to_approx_only() {
        let s = dwt2(&Grid::filled(8, 6, 1.5)).unwrap();
        assert!(s.approx.as_slice().iter().all(|&v| v == 3.0));
        for d in [&s.detail_h, &s.detail_v, &s.detail_d] {
            assert!(d.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_sizes_are_rejected() {
        assert_eq!(dwt2(&Grid::filled(3, 4, 0.0)).unwrap_err(), Error::OddDimension { rows: 3, cols: 4 });
    }

    #[test]
    fn approx_only_inverse_spreads_evenly() {
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut s = dwt2(&g).unwrap();
        for d in [&mut s.detail_h, &mut s.detail_v, &mut s.detail_d] {
            d.as_mut_slice().fill(0.0);
        }
        assert_eq!(idwt2(&s).unwrap().as_slice(), &[2.5; 4]);
    }

    #[test]
    fn zero_subbands_invert_to_zero() {
        let z = Grid::filled(3, 5, 0.0);
        let s = Subbands { approx: z.clone(), detail_h: z.clone(), detail_v: z.clone(), detail_d: z };
        assert!(idwt2(&s).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_subbands_fail() {
        let s = Subbands {
            approx: Grid::filled(2, 2, 0.0),
            detail_h: Grid::filled(2, 2, 0.0),
            detail_v: Grid::filled(2, 3, 0.0),
            detail_d: Grid::filled(2, 2, 0.0),
        };
        assert!(matches!(idwt2(&s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn haar_bank_matches_block_formulas() {
        let g = random(16, 12, 3);
        let fast = dwt2(&g).unwrap();
        let bank = Wavelet::Filters(FilterBank::haar()).dwt2(&g).unwrap();
        for (a, b) in [
            (&fast.approx, &bank.approx),
            (&fast.detail_h, &bank.detail_h),
            (&fast.detail_v, &bank.detail_v),
            (&fast.detail_d, &bank.detail_d),
        ] {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn db2_reconstructs_and_preserves_energy() {
        let w = Wavelet::Filters(FilterBank::daubechies2());
        let g = random(32, 24, 9);
        let s = w.dwt2(&g).unwrap();
        assert!((s.energy() - energy(&g)).abs() <= 1e-9 * energy(&g));
        let back = w.idwt2(&s).unwrap();
        let err = back.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn chain_sizes_and_gain() {
        let chain = approx_chain(&Grid::filled(512, 512, 0.25), 2).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!((chain[0].rows(), chain[0].cols()), (256, 256));
        assert_eq!((chain[1].rows(), chain[1].cols()), (128, 128));
        assert!(chain[0].as_slice().iter().all(|&v| v == 0.5));
        assert!(chain[1].as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn chain_level_one_is_dwt_approx() {
        let g = random(8, 8, 1);
        assert_eq!(approx_chain(&g, 1).unwrap()[0], dwt2(&g).unwrap().approx);
    }

    #[test]
    fn chain_rejects_indivisible_sizes() {
        assert!(matches!(approx_chain(&Grid::filled(12, 8, 0.0), 3), Err(Error::NotDivisible { .. })));
        assert!(approx_chain(&Grid::filled(12, 8, 0.0), 2).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn perfect_reconstruction(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
                let g = random(2 * h, 2 * w, seed);
                let back = idwt2(&dwt2(&g).unwrap()).unwrap();
                let err = back.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-6);
            }

            #[test]
            fn energy_is_preserved(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
                let g = random(2 * h, 2 * w, seed);
                let e = energy(&g);
                prop_assert!((dwt2(&g).unwrap().energy() - e).abs() <= 1e-6 * e);
            }

            #[test]
            fn linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let x = random(10, 14, seed);
                let y = random(10, 14, seed ^ 0x5555);
                let mix = Grid::from_fn(10, 14, |r, c| alpha * x.get(r, c) + beta * y.get(r, c));
                let (sx, sy, sm) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&mix).unwrap());
                for (m, (a, b)) in [
                    (&sm.approx, (&sx.approx, &sy.approx)),
                    (&sm.detail_h, (&sx.detail_h, &sy.detail_h)),
                    (&sm.detail_v, (&sx.detail_v, &sy.detail_v)),
                    (&sm.detail_d, (&sx.detail_d, &sy.detail_d)),
                ] {
                    for i in 0..m.as_slice().len() {
                        let want = alpha * a.as_slice()[i] + beta * b.as_slice()[i];
                        prop_assert!((m.as_slice()[i] - want).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
