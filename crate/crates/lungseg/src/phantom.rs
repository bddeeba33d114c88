//! Writing synthetic datasets to disk.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lungseg_core::phantom::{generate_volume, PhantomSpec};
use lungseg_core::{Manufacturer, Volume};

use crate::datastore::write_volume;
use crate::error::{Error, Result};

/// Per-manufacturer subject and slice counts of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub subjects: usize,
    pub tumor_slices: usize,
    pub non_tumor_slices: usize,
}

impl Counts {
    fn add(&mut self, v: &Volume) {
        self.subjects += 1;
        self.tumor_slices += v.tumor_slices();
        self.non_tumor_slices += v.len() - v.tumor_slices();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetSummary {
    pub cms: Counts,
    pub siemens: Counts,
}

impl DatasetSummary {
    pub fn scan<'a>(volumes: impl IntoIterator<Item = &'a Volume>) -> Self {
        let mut s = DatasetSummary::default();
        for v in volumes {
            match v.manufacturer() {
                Manufacturer::Cms => s.cms.add(v),
                Manufacturer::Siemens => s.siemens.add(v),
            }
        }
        s
    }

    pub fn patients(&self) -> usize {
        self.cms.subjects + self.siemens.subjects
    }

    pub fn tumor_slices(&self) -> usize {
        self.cms.tumor_slices + self.siemens.tumor_slices
    }

    pub fn non_tumor_slices(&self) -> usize {
        self.cms.non_tumor_slices + self.siemens.non_tumor_slices
    }

    pub fn total_slices(&self) -> usize {
        self.tumor_slices() + self.non_tumor_slices()
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>13} {:>17}", "Manufacturer", "Subjects", "Tumor slices", "Non-tumor slices")?;
        for (name, c) in [("CMS", self.cms), ("SIEMENS", self.siemens)] {
            writeln!(f, "{name:<12} {:>9} {:>13} {:>17}", c.subjects, c.tumor_slices, c.non_tumor_slices)?;
        }
        write!(f, "{:<12} {:>9} {:>13} {:>17}", "Total", self.patients(), self.tumor_slices(), self.non_tumor_slices())
    }
}

/// Writes one patient directory per phantom patient below `out`. On failure
/// every directory created by this call is removed again.
pub fn generate_dataset(spec: &PhantomSpec, out: &Path) -> Result<DatasetSummary> {
    spec.validate()?;
    let root_existed = out.exists();
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut created: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut summary = DatasetSummary::default();
        for i in 0..spec.n_patients {
            let volume = generate_volume(spec, i)?;
            let dir = out.join(volume.patient_id());
            if !dir.exists() {
                created.push(dir.clone());
            }
            write_volume(&volume, &dir)?;
            match volume.manufacturer() {
                Manufacturer::Cms => summary.cms.add(&volume),
                Manufacturer::Siemens => summary.siemens.add(&volume),
            }
        }
        Ok(summary)
    })();
    if result.is_err() {
        for dir in &created {
            let _ = fs::remove_dir_all(dir);
        }
        if !root_existed {
            let _ = fs::remove_dir_all(out);
        }
    }
    result
}
