use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Scanner vendor. Each vendor exports raw intensities over its own
/// 4096-value window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Manufacturer {
    Cms,
    Siemens,
}

impl Manufacturer {
    /// Inclusive raw intensity range `(lo, hi)`.
    pub const fn range(self) -> (i32, i32) {
        match self {
            Manufacturer::Cms => (-1024, 3071),
            Manufacturer::Siemens => (0, 4095),
        }
    }

    /// Raw value corresponding to a Hounsfield unit.
    pub const fn raw_from_hu(self, hu: i32) -> i32 {
        match self {
            Manufacturer::Cms => hu,
            Manufacturer::Siemens => hu + 1024,
        }
    }

    pub const fn tag(self) -> &'static str {
        match self {
            Manufacturer::Cms => "CMS",
            Manufacturer::Siemens => "SIEMENS",
        }
    }

    pub fn check(self, value: i32) -> Result<()> {
        let (lo, hi) = self.range();
        if value < lo || value > hi {
            return Err(Error::IntensityRange { value, manufacturer: self.tag(), lo, hi });
        }
        Ok(())
    }
}

impl fmt::Display for Manufacturer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Manufacturer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CMS" => Ok(Manufacturer::Cms),
            "SIEMENS" => Ok(Manufacturer::Siemens),
            other => Err(Error::InvalidVolume(format!("unknown manufacturer {other:?}"))),
        }
    }
}

/// One patient's CT stack with per-slice ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    patient_id: String,
    manufacturer: Manufacturer,
    slice_size: usize,
    slices: Vec<Grid<i16>>,
    masks: Vec<Grid<u8>>,
}

impl Volume {
    /// Validates shapes, mask values and the vendor intensity window.
    pub fn new(
        patient_id: impl Into<String>,
        manufacturer: Manufacturer,
        slice_size: usize,
        slices: Vec<Grid<i16>>,
        masks: Vec<Grid<u8>>,
    ) -> Result<Self> {
        if slice_size == 0 {
            return Err(Error::InvalidVolume("slice_size must be positive".into()));
        }
        if slices.is_empty() || slices.len() != masks.len() {
            return Err(Error::InvalidVolume(format!(
                "{} slices and {} masks; need an equal, non-zero count",
                slices.len(),
                masks.len()
            )));
        }
        for (i, (s, m)) in slices.iter().zip(&masks).enumerate() {
            for g in [(s.rows(), s.cols()), (m.rows(), m.cols())] {
                if g != (slice_size, slice_size) {
                    return Err(Error::InvalidVolume(format!(
                        "slice {i} is {}x{}, expected {slice_size}x{slice_size}",
                        g.0, g.1
                    )));
                }
            }
            for &v in s.as_slice() {
                manufacturer.check(v as i32)?;
            }
            if m.as_slice().iter().any(|&v| v > 1) {
                return Err(Error::InvalidVolume(format!("mask {i} is not binary")));
            }
        }
        Ok(Volume { patient_id: patient_id.into(), manufacturer, slice_size, slices, masks })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn manufacturer(&self) -> Manufacturer {
        self.manufacturer
    }

    pub fn slice_size(&self) -> usize {
        self.slice_size
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[Grid<i16>] {
        &self.slices
    }

    pub fn masks(&self) -> &[Grid<u8>] {
        &self.masks
    }

    /// Number of slices whose mask has at least one tumor pixel.
    pub fn tumor_slices(&self) -> usize {
        self.masks.iter().filter(|m| m.as_slice().iter().any(|&v| v != 0)).count()
    }
}
