//! Turns volumes into model-ready instances: vendor normalization, a shared
//! crop window, neighbour stacking, wavelet approximation channels,
//! augmentation and patient-level fold splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{Manufacturer, Volume};
use crate::wavelet::Wavelet;
use crate::INSTANCE_SIZE;

/// Map raw vendor intensities linearly onto `[0, 1]`.
pub fn normalize_intensity(slice: &Grid<i16>, manufacturer: Manufacturer) -> Grid<f64> {
    let (lo, hi) = manufacturer.range();
    let span = (hi - lo) as f64;
    slice.map(|v| ((v as i32 - lo) as f64 / span).clamp(0.0, 1.0))
}

/// Rectangle in original slice coordinates, shared by training and test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub fn new(row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(Error::InvalidWindow(format!("{height}x{width} must be even and non-empty")));
        }
        Ok(CropWindow { row0, col0, height, width })
    }

    pub fn full(slice_size: usize) -> Self {
        CropWindow { row0: 0, col0: 0, height: slice_size, width: slice_size }
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.row0 + self.height <= rows && self.col0 + self.width <= cols
    }

    pub fn apply<T: Copy>(&self, g: &Grid<T>) -> Result<Grid<T>> {
        g.crop(self.row0, self.col0, self.height, self.width)
    }
}

/// Grow `[lo, hi]` by one pixel so its length becomes even, preferring the
/// far side.
fn even_extent(lo: usize, hi: usize, len: usize) -> (usize, usize) {
    if (hi - lo + 1).is_multiple_of(2) {
        (lo, hi)
    } else if hi + 1 < len {
        (lo, hi + 1)
    } else if lo > 0 {
        (lo - 1, hi)
    } else {
        (lo, hi)
    }
}

/// Tight box around every tumor pixel of every mask, padded by `margin`,
/// clamped to the slice and rounded up to even sides.
pub fn compute_crop_window<'a, I>(training_masks: I, margin: usize) -> Result<CropWindow>
where
    I: IntoIterator<Item = &'a Grid<u8>>,
{
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    let mut dims = (0, 0);
    for m in training_masks {
        dims = (m.rows(), m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                if m.get(r, c) != 0 {
                    bounds = Some(match bounds {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
    }
    let (r0, r1, c0, c1) = bounds.ok_or(Error::EmptyMasks)?;
    let (rows, cols) = dims;
    let (r0, r1) = even_extent(r0.saturating_sub(margin), (r1 + margin).min(rows - 1), rows);
    let (c0, c1) = even_extent(c0.saturating_sub(margin), (c1 + margin).min(cols - 1), cols);
    CropWindow::new(r0, c0, r1 - r0 + 1, c1 - c0 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Original,
    Previous,
    Next,
    Approx1,
    Approx2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ChannelMode {
    /// Slice, both neighbours and two wavelet approximations.
    #[default]
    Five,
    /// Slice and both neighbours only.
    Three,
}

impl ChannelMode {
    pub const fn order(self) -> &'static [Channel] {
        match self {
            ChannelMode::Five => &[Channel::Original, Channel::Previous, Channel::Next, Channel::Approx1, Channel::Approx2],
            ChannelMode::Three => &[Channel::Original, Channel::Previous, Channel::Next],
        }
    }

    pub const fn depth(self) -> usize {
        self.order().len()
    }
}

/// One training or evaluation sample: `INSTANCE_SIZE`² pixels by `C`
/// channels (channel-last) plus the binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mode: ChannelMode,
    /// `size * size * depth` values, row-major, channel fastest.
    pub features: Vec<f32>,
    pub mask: Grid<u8>,
    pub size: usize,
}

impl Instance {
    pub fn depth(&self) -> usize {
        self.mode.depth()
    }

    pub fn channel_order(&self) -> &'static [Channel] {
        self.mode.order()
    }

    pub fn channel(&self, k: usize) -> Grid<f32> {
        let d = self.depth();
        Grid::from_fn(self.size, self.size, |r, c| self.features[(r * self.size + c) * d + k])
    }

    pub fn from_channels(mode: ChannelMode, channels: &[Grid<f32>], mask: Grid<u8>) -> Result<Self> {
        let size = mask.rows();
        if channels.len() != mode.depth()
            || mask.cols() != size
            || channels.iter().any(|g| g.rows() != size || g.cols() != size)
        {
            return Err(Error::ShapeMismatch(format!(
                "{} channels for mode {mode:?} with a {}x{} mask",
                channels.len(),
                mask.rows(),
                mask.cols()
            )));
        }
        let d = channels.len();
        let mut features = vec![0.0; size * size * d];
        for (k, ch) in channels.iter().enumerate() {
            for (i, &v) in ch.as_slice().iter().enumerate() {
                features[i * d + k] = v;
            }
        }
        Ok(Instance { mode, features, mask, size })
    }

    pub fn is_tumor(&self) -> bool {
        self.mask.as_slice().iter().any(|&v| v != 0)
    }
}

fn to_f32(g: &Grid<f64>) -> Grid<f32> {
    g.map(|v| v as f32)
}

/// Normalized, cropped slice `index` of `volume`.
fn prepared(volume: &Volume, index: usize, window: &CropWindow) -> Result<Grid<f64>> {
    window.apply(&normalize_intensity(&volume.slices()[index], volume.manufacturer()))
}

/// Builds the instance for one slice. Neighbours past either end of the
/// volume replicate the edge slice.
pub fn build_instance(volume: &Volume, slice_index: usize, window: &CropWindow, mode: ChannelMode) -> Result<Instance> {
    let n = volume.len();
    if slice_index >= n {
        return Err(Error::IndexOutOfRange { index: slice_index, len: n });
    }
    if !window.fits(volume.slice_size(), volume.slice_size()) {
        return Err(Error::InvalidWindow(format!(
            "{window:?} does not fit a {0}x{0} slice",
            volume.slice_size()
        )));
    }
    let size = INSTANCE_SIZE;
    let original = prepared(volume, slice_index, window)?;
    let prev_idx = slice_index.saturating_sub(1);
    let next_idx = (slice_index + 1).min(n - 1);
    let resize = |g: &Grid<f64>| to_f32(&g.resize_bilinear(size, size));
    let mut channels = vec![
        resize(&original),
        if prev_idx == slice_index { resize(&original) } else { resize(&prepared(volume, prev_idx, window)?) },
        if next_idx == slice_index { resize(&original) } else { resize(&prepared(volume, next_idx, window)?) },
    ];
    if mode == ChannelMode::Five {
        let upscaled = original.resize_bilinear(2 * size, 2 * size);
        let chain = Wavelet::Haar.approx_chain(&upscaled, 2)?;
        channels.push(to_f32(&chain[0]));
        channels.push(resize(&chain[1]));
    }
    let mask = window.apply(&volume.masks()[slice_index])?.resize_nearest(size, size).map(|v| (v != 0) as u8);
    Instance::from_channels(mode, &channels, mask)
}

/// Every slice of `volume`, in order.
pub fn build_volume_instances(volume: &Volume, window: &CropWindow, mode: ChannelMode) -> Result<Vec<Instance>> {
    (0..volume.len()).map(|i| build_instance(volume, i, window, mode)).collect()
}

/// Flip/rotate policy for training augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    /// Rotation magnitudes are drawn uniformly from `[min, max]` degrees
    /// with a random sign.
    pub min_angle: f64,
    pub max_angle: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_probability: 0.5, min_angle: 5.0, max_angle: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Flip,
    Rotate(f64),
}

impl Transform {
    pub fn draw<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        if rng.gen::<f64>() < cfg.flip_probability {
            Transform::Flip
        } else {
            let magnitude = rng.gen_range(cfg.min_angle..=cfg.max_angle);
            Transform::Rotate(if rng.gen::<bool>() { magnitude } else { -magnitude })
        }
    }

    /// Same geometric transform on every channel (bilinear, zero fill) and
    /// on the mask (nearest, re-binarized).
    pub fn apply(&self, instance: &Instance) -> Instance {
        let d = instance.depth();
        let channels: Vec<Grid<f32>> = (0..d)
            .map(|k| {
                let ch = instance.channel(k);
                match *self {
                    Transform::Flip => ch.flip_horizontal(),
                    Transform::Rotate(deg) => ch.rotate_bilinear(deg, 0.0),
                }
            })
            .collect();
        let mask = match *self {
            Transform::Flip => instance.mask.flip_horizontal(),
            Transform::Rotate(deg) => instance.mask.rotate_nearest(deg, 0).map(|v| (v != 0) as u8),
        };
        Instance::from_channels(instance.mode, &channels, mask).expect("transform preserves shape")
    }
}

pub fn augment_pair<R: Rng>(instance: &Instance, cfg: &AugmentConfig, rng: &mut R) -> Instance {
    Transform::draw(cfg, rng).apply(instance)
}

/// Originals in order followed by one augmented copy of each.
pub fn expand_training_set<R: Rng>(instances: &[Instance], cfg: &AugmentConfig, rng: &mut R) -> Vec<Instance> {
    let mut out = Vec::with_capacity(2 * instances.len());
    out.extend_from_slice(instances);
    for inst in instances {
        out.push(augment_pair(inst, cfg, rng));
    }
    out
}

/// Disjoint patient groups for k-fold cross validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(training, held_out)` patient ids when fold `held_out` is the test set.
    /// A single fold trains and evaluates on everyone.
    pub fn partition(&self, held_out: usize) -> Result<(Vec<String>, Vec<String>)> {
        if held_out >= self.folds.len() {
            return Err(Error::IndexOutOfRange { index: held_out, len: self.folds.len() });
        }
        if self.folds.len() == 1 {
            return Ok((self.folds[0].clone(), self.folds[0].clone()));
        }
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        Ok((train, self.folds[held_out].clone()))
    }
}

/// Seeded shuffle followed by round-robin assignment.
pub fn split_folds<S: AsRef<str>>(patient_ids: &[S], k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 || k > patient_ids.len() {
        return Err(Error::TooManyFolds { folds: k, patients: patient_ids.len() });
    }
    let mut ids: Vec<String> = patient_ids.iter().map(|s| String::from(s.as_ref())).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldSplit { folds })
}
