//! On-disk formats: patient directories, `LSEG` weight files and `LSPM`
//! probability maps. All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lungseg_core::models::Graph;
use lungseg_core::nn::Tensor;
use lungseg_core::{Grid, Manufacturer, Volume};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const SLICES: &str = "slices.raw";
pub const MASKS: &str = "masks.raw";

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LSEG";
pub const WEIGHTS_VERSION: u32 = 1;
pub const PROB_MAP_MAGIC: [u8; 4] = *b"LSPM";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

/// Writes the three-file patient directory, creating `dir` if needed.
pub fn write_volume(volume: &Volume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let manifest = format!(
        "patient_id={}\nmanufacturer={}\nslice_count={}\nslice_size={}\n",
        volume.patient_id(),
        volume.manufacturer(),
        volume.len(),
        volume.slice_size()
    );
    write_file(&dir.join(MANIFEST), manifest.as_bytes())?;
    let n = volume.slice_size() * volume.slice_size();
    let mut slices = Vec::with_capacity(volume.len() * n * 2);
    for s in volume.slices() {
        for v in s.as_slice() {
            slices.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(&dir.join(SLICES), &slices)?;
    let masks: Vec<u8> = volume.masks().iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    write_file(&dir.join(MASKS), &masks)
}

fn parse_manifest(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format(path, format!("malformed line {line:?}")))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::format(path, format!("duplicate key {}", k.trim())));
        }
    }
    Ok(map)
}

/// Reads a patient directory, validating sizes and intensity ranges.
pub fn read_volume(dir: &Path) -> Result<Volume> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    let map = parse_manifest(&manifest_path, &text)?;
    let field = |k: &str| map.get(k).ok_or_else(|| Error::format(&manifest_path, format!("missing key {k}")));
    let number = |k: &str| -> Result<usize> {
        field(k)?.parse().map_err(|_| Error::format(&manifest_path, format!("{k} is not a non-negative integer")))
    };
    let patient_id = field("patient_id")?.clone();
    let manufacturer: Manufacturer =
        field("manufacturer")?.parse().map_err(|e: lungseg_core::Error| Error::format(&manifest_path, e.to_string()))?;
    let (count, size) = (number("slice_count")?, number("slice_size")?);
    let pixels = count.checked_mul(size * size).ok_or_else(|| Error::format(&manifest_path, "slice payload too large"))?;

    let slices_path = dir.join(SLICES);
    let raw = read_file(&slices_path)?;
    if raw.len() != pixels * 2 {
        return Err(Error::format(&slices_path, format!("{} bytes where the manifest implies {}", raw.len(), pixels * 2)));
    }
    let masks_path = dir.join(MASKS);
    let raw_masks = read_file(&masks_path)?;
    if raw_masks.len() != pixels {
        return Err(Error::format(&masks_path, format!("{} bytes where the manifest implies {pixels}", raw_masks.len())));
    }
    let n = size * size;
    let mut slices = Vec::with_capacity(count);
    for k in 0..count {
        let values: Vec<i16> =
            raw[2 * k * n..2 * (k + 1) * n].chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        if let Some(&v) = values.iter().find(|&&v| manufacturer.check(v as i32).is_err()) {
            let (lo, hi) = manufacturer.range();
            return Err(Error::format(
                &slices_path,
                format!("slice {k}: intensity {v} outside the {manufacturer} range [{lo}, {hi}]"),
            ));
        }
        slices.push(Grid::from_vec(size, size, values)?);
    }
    let masks = raw_masks.chunks_exact(n.max(1)).map(|m| Grid::from_vec(size, size, m.to_vec())).collect::<Result<_, _>>()?;
    Volume::new(patient_id, manufacturer, size, slices, masks)
        .map_err(|e| Error::format(dir, format!("invalid volume: {e}")))
}

/// Patient directories directly below `root`, in name order.
pub fn patient_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(Error::io(root))? {
        let entry = entry.map_err(Error::io(root))?;
        let path = entry.path();
        if path.is_dir() && path.join(MANIFEST).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Every patient volume below `root`, in directory-name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Volume>> {
    let dirs = patient_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::format(root, "no patient directories"));
    }
    dirs.iter().map(|d| read_volume(d)).collect()
}

/// One named tensor of a weights file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

pub fn encode_weights(entries: &[WeightEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let want: usize = e.dims.iter().map(|&d| d as usize).product();
        if want != e.data.len() {
            return Err(Error::Usage(format!("entry {}: dims {:?} hold {want} values, got {}", e.name, e.dims, e.data.len())));
        }
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "entry too large"))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }
}

pub fn decode_weights(path: &Path, bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut c = Cursor { path, bytes, at: 0 };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "bad magic, not an LSEG weights file"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(path, format!("unsupported weights version {version}")));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::format(path, "entry name is not UTF-8"))?;
        if !seen.insert(name.clone()) {
            return Err(Error::format(path, format!("duplicate entry {name}")));
        }
        let ndims = c.u32()? as usize;
        let dims = (0..ndims).map(|_| c.u32()).collect::<Result<Vec<u32>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let n = n.ok_or_else(|| Error::format(path, format!("entry {name}: dims overflow")))?;
        let data = c.f32s(n)?;
        entries.push(WeightEntry { name, dims, data });
    }
    if c.at != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok(entries)
}

/// Every parameter of `graph`, running statistics included, in inventory
/// order.
pub fn graph_entries(graph: &Graph<f32>) -> Vec<WeightEntry> {
    graph
        .parameters()
        .iter()
        .map(|p| WeightEntry {
            name: p.name.clone(),
            dims: p.tensor.dims().iter().map(|&d| d as u32).collect(),
            data: p.tensor.values().to_vec(),
        })
        .collect()
}

pub fn save_weights(graph: &Graph<f32>, path: &Path) -> Result<()> {
    write_file(path, &encode_weights(&graph_entries(graph))?)
}

/// Replaces every parameter of `graph`; on any mismatch nothing is modified.
pub fn load_weights(path: &Path, graph: &mut Graph<f32>) -> Result<()> {
    let entries = decode_weights(path, &read_file(path)?)?;
    let tensors = entries
        .into_iter()
        .map(|e| {
            let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
            Tensor::from_vec(&dims, e.data).map(|t| (e.name, t))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    graph.replace_parameters(tensors)?;
    Ok(())
}

/// `LSPM`, rows and cols as u32, then row-major f32 probabilities.
pub fn write_prob_map(map: &Grid<f32>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 4 * map.as_slice().len());
    out.extend_from_slice(&PROB_MAP_MAGIC);
    out.extend_from_slice(&(map.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(map.cols() as u32).to_le_bytes());
    for v in map.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_prob_map(path: &Path) -> Result<Grid<f32>> {
    let bytes = read_file(path)?;
    let mut c = Cursor { path, bytes: &bytes, at: 0 };
    if c.take(4)? != PROB_MAP_MAGIC {
        return Err(Error::format(path, "bad magic, not an LSPM probability map"));
    }
    let (rows, cols) = (c.u32()? as usize, c.u32()? as usize);
    let data = c.f32s(rows * cols)?;
    if c.at != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(Grid::from_vec(rows, cols, data)?)
}

/// Writes an 8-bit grayscale PNG.
pub fn write_png(image: &Grid<u8>, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(image.cols() as u32, image.rows() as u32, image.as_slice().to_vec())
        .ok_or_else(|| Error::format(path, "image buffer size mismatch"))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, buf.get_ref())
}
