//! Deterministic synthetic CT volumes.
//!
//! Each patient gets a smooth sinusoidal "anatomy" background, Gaussian
//! noise and at most one tumor: an axis-aligned ellipse with a fixed centre
//! that persists over a contiguous run of slices, its radii swelling by up to
//! 20% towards the middle of the run.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{Manufacturer, Volume};

/// Mean background attenuation in HU.
const BACKGROUND_HU: f64 = -550.0;
/// Peak amplitude of the background texture in HU.
const ANATOMY_HU: f64 = 120.0;
/// Tumor (soft tissue) attenuation in HU.
const TUMOR_HU: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub slices_per_patient: usize,
    /// Pixels per side.
    pub slice_size: usize,
    /// Fraction of patients scanned on CMS hardware; the rest are SIEMENS.
    pub manufacturer_split: f64,
    /// Fraction of each patient's slices that contain the tumor.
    pub tumor_probability: f64,
    /// Inclusive range for each ellipse semi-axis, in pixels.
    pub tumor_radius_range: (f64, f64),
    /// Standard deviation of the additive noise, in HU.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_patients: 8,
            slices_per_patient: 16,
            slice_size: 512,
            manufacturer_split: 0.25,
            tumor_probability: 0.14,
            tumor_radius_range: (12.0, 30.0),
            noise_sigma: 220.0,
            seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if self.n_patients == 0 || self.slices_per_patient == 0 {
            return bad("n_patients and slices_per_patient must be positive".into());
        }
        if self.slice_size < 4 || !self.slice_size.is_multiple_of(2) {
            return bad(format!("slice_size {} must be even and at least 4", self.slice_size));
        }
        for (name, v) in [("manufacturer_split", self.manufacturer_split), ("tumor_probability", self.tumor_probability)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.tumor_radius_range;
        if !(lo > 0.0 && lo <= hi && hi < self.slice_size as f64 / 4.0) {
            return bad(format!(
                "tumor_radius_range ({lo}, {hi}) must satisfy 0 < min <= max < slice_size/4 = {}",
                self.slice_size as f64 / 4.0
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        Ok(())
    }

    pub fn manufacturer(&self, patient_index: usize) -> Manufacturer {
        // spreads floor(n * split) CMS patients evenly over the index range
        let before = libm::floor(patient_index as f64 * self.manufacturer_split);
        let after = libm::floor((patient_index + 1) as f64 * self.manufacturer_split);
        if after > before {
            Manufacturer::Cms
        } else {
            Manufacturer::Siemens
        }
    }
}

pub fn patient_id(patient_index: usize) -> alloc::string::String {
    format!("P{patient_index:03}")
}

/// Geometry of one tumor cross-section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_row: f64,
    pub center_col: f64,
    pub radius_rows: f64,
    pub radius_cols: f64,
}

impl Ellipse {
    #[inline]
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let dy = (r as f64 - self.center_row) / self.radius_rows;
        let dx = (c as f64 - self.center_col) / self.radius_cols;
        dy * dy + dx * dx <= 1.0
    }
}

/// The tumor layout for one patient: ellipse per slice, `None` where the
/// slice is tumor-free.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPlan {
    pub manufacturer: Manufacturer,
    pub tumors: Vec<Option<Ellipse>>,
}

struct Anatomy {
    waves: [(f64, f64, f64, f64, f64); 3],
}

impl Anatomy {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut wave = || {
            (
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.3..1.0),
            )
        };
        Anatomy { waves: [wave(), wave(), wave()] }
    }

    fn hu(&self, r: f64, c: f64, size: f64, depth: f64) -> f64 {
        let mut total = 0.0;
        let mut weight = 0.0;
        for &(fy, fx, py, px, a) in &self.waves {
            total += a * libm::sin(2.0 * PI * (fx * c / size + px + 0.02 * depth))
                * libm::cos(2.0 * PI * (fy * r / size + py));
            weight += a;
        }
        BACKGROUND_HU + ANATOMY_HU * total / weight
    }
}

fn patient_rng(spec: &PhantomSpec, patient_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(patient_index as u64);
    rng
}

/// Number of tumor slices each patient gets under `spec`.
pub fn tumor_span(spec: &PhantomSpec) -> usize {
    let s = spec.slices_per_patient;
    if spec.tumor_probability <= 0.0 {
        return 0;
    }
    let mut n = libm::round(spec.tumor_probability * s as f64) as usize;
    if s >= 3 {
        n = n.max(2);
    }
    n.clamp(1, s)
}

fn plan_with(spec: &PhantomSpec, patient_index: usize, rng: &mut ChaCha8Rng) -> PatientPlan {
    let s = spec.slices_per_patient;
    let size = spec.slice_size as f64;
    let (rmin, rmax) = spec.tumor_radius_range;
    let span = tumor_span(spec);
    let mut tumors = alloc::vec![None; s];
    if span > 0 {
        let start = rng.gen_range(0..=s - span);
        let ry = rng.gen_range(rmin..=rmax);
        let rx = rng.gen_range(rmin..=rmax);
        // keep every slice's ellipse inside rows/cols [size/4, 3*size/4)
        let lo = size / 4.0 + rmax;
        let hi = 3.0 * size / 4.0 - 1.0 - rmax;
        let mut center = || if hi > lo { rng.gen_range(lo..=hi) } else { (size - 1.0) / 2.0 };
        let (cy, cx) = (center(), center());
        for k in 0..span {
            let swell = 0.8 + 0.4 * libm::sin(PI * (k as f64 + 0.5) / span as f64);
            tumors[start + k] = Some(Ellipse {
                center_row: cy,
                center_col: cx,
                radius_rows: (ry * swell).clamp(rmin, rmax),
                radius_cols: (rx * swell).clamp(rmin, rmax),
            });
        }
    }
    PatientPlan { manufacturer: spec.manufacturer(patient_index), tumors }
}

/// Tumor layout that [`generate_volume`] draws for `patient_index`.
pub fn patient_plan(spec: &PhantomSpec, patient_index: usize) -> Result<PatientPlan> {
    check_index(spec, patient_index)?;
    Ok(plan_with(spec, patient_index, &mut patient_rng(spec, patient_index)))
}

fn check_index(spec: &PhantomSpec, patient_index: usize) -> Result<()> {
    spec.validate()?;
    if patient_index >= spec.n_patients {
        return Err(Error::IndexOutOfRange { index: patient_index, len: spec.n_patients });
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

/// Generates one patient. Pure in `(spec, patient_index)`.
pub fn generate_volume(spec: &PhantomSpec, patient_index: usize) -> Result<Volume> {
    check_index(spec, patient_index)?;
    let mut rng = patient_rng(spec, patient_index);
    let plan = plan_with(spec, patient_index, &mut rng);
    let anatomy = Anatomy::draw(&mut rng);
    let n = spec.slice_size;
    let manufacturer = plan.manufacturer;
    let (lo, hi) = manufacturer.range();
    let mut slices = Vec::with_capacity(spec.slices_per_patient);
    let mut masks = Vec::with_capacity(spec.slices_per_patient);
    for (depth, tumor) in plan.tumors.iter().enumerate() {
        let mut mask = Grid::filled(n, n, 0u8);
        let mut slice = Grid::filled(n, n, 0i16);
        for r in 0..n {
            for c in 0..n {
                let inside = tumor.is_some_and(|e| e.contains(r, c));
                let base = if inside {
                    TUMOR_HU
                } else {
                    anatomy.hu(r as f64, c as f64, n as f64, depth as f64)
                };
                let hu = if spec.noise_sigma > 0.0 { base + spec.noise_sigma * gaussian(&mut rng) } else { base };
                let raw = manufacturer.raw_from_hu(libm::round(hu) as i32).clamp(lo, hi);
                slice.set(r, c, raw as i16);
                if inside {
                    mask.set(r, c, 1);
                }
            }
        }
        slices.push(slice);
        masks.push(mask);
    }
    Volume::new(patient_id(patient_index), manufacturer, n, slices, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec { n_patients: 4, slices_per_patient: 6, slice_size: 64, tumor_radius_range: (3.0, 6.0), ..PhantomSpec::default() }
    }

    /// Lattice points inside an ellipse, counted over the full grid.
    fn lattice_area(e: &Ellipse, n: usize) -> usize {
        let mut count = 0;
        for r in 0..n {
            for c in 0..n {
                let y = r as f64 - e.center_row;
                let x = c as f64 - e.center_col;
                if y * y * e.radius_cols * e.radius_cols + x * x * e.radius_rows * e.radius_rows
                    <= e.radius_rows * e.radius_rows * e.radius_cols * e.radius_cols
                {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn zero_probability_gives_empty_masks() {
        let spec = PhantomSpec { tumor_probability: 0.0, ..small() };
        for p in 0..spec.n_patients {
            let v = generate_volume(&spec, p).unwrap();
            assert_eq!(v.tumor_slices(), 0);
        }
    }

    #[test]
    fn fixed_radius_masks_match_lattice_area() {
        let r = 5.0;
        let spec = PhantomSpec { noise_sigma: 0.0, tumor_probability: 1.0, tumor_radius_range: (r, r), ..small() };
        let v = generate_volume(&spec, 1).unwrap();
        let plan = patient_plan(&spec, 1).unwrap();
        let e = plan.tumors[0].unwrap();
        assert_eq!((e.radius_rows, e.radius_cols), (r, r));
        let want = lattice_area(&e, spec.slice_size);
        for m in v.masks() {
            assert_eq!(m.as_slice().iter().filter(|&&x| x == 1).count(), want);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small();
        assert_eq!(generate_volume(&spec, 2).unwrap(), generate_volume(&spec, 2).unwrap());
        assert_ne!(generate_volume(&spec, 2).unwrap(), generate_volume(&spec, 3).unwrap());
    }

    #[test]
    fn masks_equal_ellipse_lattice_sets_and_stay_central() {
        let spec = PhantomSpec { tumor_probability: 0.5, ..small() };
        let n = spec.slice_size;
        for p in 0..spec.n_patients {
            let v = generate_volume(&spec, p).unwrap();
            let plan = patient_plan(&spec, p).unwrap();
            for (mask, tumor) in v.masks().iter().zip(&plan.tumors) {
                for r in 0..n {
                    for c in 0..n {
                        let inside = tumor.is_some_and(|e| e.contains(r, c));
                        assert_eq!(mask.get(r, c) == 1, inside);
                        if inside {
                            assert!(r >= n / 4 && r < 3 * n / 4 && c >= n / 4 && c < 3 * n / 4);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tumors_span_consecutive_slices() {
        let spec = small();
        for p in 0..spec.n_patients {
            let plan = patient_plan(&spec, p).unwrap();
            let idx: Vec<usize> = plan.tumors.iter().enumerate().filter(|(_, t)| t.is_some()).map(|(i, _)| i).collect();
            assert!(idx.len() >= 2);
            assert!(idx.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn intensities_respect_vendor_window() {
        let spec = PhantomSpec { manufacturer_split: 0.5, noise_sigma: 900.0, ..small() };
        let mut seen = [false; 2];
        for p in 0..spec.n_patients {
            let v = generate_volume(&spec, p).unwrap();
            let (lo, hi) = v.manufacturer().range();
            seen[(v.manufacturer() == Manufacturer::Cms) as usize] = true;
            for s in v.slices() {
                assert!(s.as_slice().iter().all(|&x| (lo..=hi).contains(&(x as i32))));
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn manufacturer_split_counts() {
        let spec = PhantomSpec { n_patients: 20, manufacturer_split: 0.25, ..small() };
        let cms = (0..20).filter(|&p| spec.manufacturer(p) == Manufacturer::Cms).count();
        assert_eq!(cms, 5);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let s = small();
        for bad in [
            PhantomSpec { tumor_radius_range: (6.0, 3.0), ..s.clone() },
            PhantomSpec { tumor_radius_range: (3.0, 16.0), ..s.clone() },
            PhantomSpec { tumor_probability: 1.5, ..s.clone() },
            PhantomSpec { n_patients: 0, ..s.clone() },
            PhantomSpec { noise_sigma: -1.0, ..s.clone() },
        ] {
            assert!(matches!(generate_volume(&bad, 0), Err(Error::InvalidSpec(_))));
        }
        assert!(matches!(generate_volume(&s, 4), Err(Error::IndexOutOfRange { .. })));
    }
}
