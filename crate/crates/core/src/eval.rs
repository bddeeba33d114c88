//! Test-time augmentation, binarization, dice and slice-level detection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{train::batch_features, Graph};
use crate::nn::Real;
use crate::pipeline::{build_instance, ChannelMode, CropWindow, Instance};
use crate::volume::Volume;

/// Per-pixel tumor probability, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Grid<f32>);

impl ProbMap {
    pub fn new(values: Grid<f32>) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!("probability {v} outside [0, 1]")));
        }
        Ok(ProbMap(values))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }
}

/// A grid of {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Grid<u8>);

impl BinaryMask {
    pub fn new(values: Grid<u8>) -> Result<Self> {
        if values.as_slice().iter().any(|&v| v > 1) {
            return Err(Error::ShapeMismatch("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask(values))
    }

    /// Any nonzero value counts as foreground.
    pub fn from_nonzero(values: &Grid<u8>) -> Self {
        BinaryMask(values.map(|v| u8::from(v != 0)))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.as_slice().iter().all(|&v| v == 0)
    }
}

/// Pixel is foreground iff its probability is strictly above `threshold`.
pub fn binarize(prob: &ProbMap, threshold: f64) -> BinaryMask {
    let t = threshold as f32;
    BinaryMask(prob.0.map(|p| u8::from(p > t)))
}

/// `2|x∩y| / (|x|+|y|)`, with an empty ground truth scoring 1 against an
/// empty prediction and 0 against any other.
pub fn dice_slice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (p, g) = (pred.grid(), gt.grid());
    if p.rows() != g.rows() || p.cols() != g.cols() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} against ground truth {}x{}",
            p.rows(),
            p.cols(),
            g.rows(),
            g.cols()
        )));
    }
    let (mut both, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.as_slice().iter().zip(g.as_slice()) {
        let (a, b) = (a != 0, b != 0);
        both += usize::from(a && b);
        np += usize::from(a);
        ng += usize::from(b);
    }
    Ok(match (ng, np) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => 2.0 * both as f64 / (np + ng) as f64,
    })
}

/// Slice-level detection counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// `2tp / (2tp + fp + fn)`, zero when the denominator is.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// A slice is positive iff it has at least one foreground pixel.
pub fn detection_stats(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<(Confusion, f64)> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(gts) {
        c.record(!p.is_empty(), !g.is_empty());
    }
    Ok((c, c.f1()))
}

/// How test-time rotation angles are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleSchedule {
    /// `360k/n` degrees for `k = 0..n`.
    #[default]
    Even,
    /// Identity first, then `n − 1` angles drawn uniformly from `[0, 360)`.
    Random { seed: u64 },
}

impl AngleSchedule {
    pub fn angles(&self, n: usize) -> Vec<f64> {
        match *self {
            AngleSchedule::Even => (0..n).map(|k| 360.0 * k as f64 / n as f64).collect(),
            AngleSchedule::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::with_capacity(n);
                if n > 0 {
                    out.push(0.0);
                }
                out.extend((1..n).map(|_| rng.gen_range(0.0..360.0)));
                out
            }
        }
    }
}

/// Maximum number of rotated copies sent through the network at once.
const TTA_BATCH: usize = 8;

fn rotate_instance(instance: &Instance, degrees: f64) -> Result<Instance> {
    if degrees == 0.0 {
        return Ok(instance.clone());
    }
    let channels: Vec<Grid<f32>> =
        (0..instance.depth()).map(|k| instance.channel(k).rotate_bilinear(degrees, 0.0)).collect();
    Instance::from_channels(instance.mode, &channels, instance.mask.clone())
}

fn predict_maps<T: Real>(graph: &Graph<T>, instances: &[&Instance]) -> Result<Vec<Grid<f32>>> {
    let out = graph.predict(batch_features::<T>(instances)?)?;
    let (n, h, w, _) = out.nhwc()?;
    let per = h * w;
    (0..n)
        .map(|i| Grid::from_vec(h, w, out.values()[i * per..(i + 1) * per].iter().map(|v| v.to_f64() as f32).collect()))
        .collect()
}

/// Plain inference on a batch of instances.
pub fn predict<T: Real>(graph: &Graph<T>, instances: &[&Instance]) -> Result<Vec<ProbMap>> {
    let mut maps = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(TTA_BATCH) {
        for g in predict_maps(graph, chunk)? {
            maps.push(ProbMap::new(g)?);
        }
    }
    Ok(maps)
}

/// Mean of the predictions on rotated copies, each rotated back first.
pub fn tta_predict<T: Real>(
    graph: &Graph<T>,
    instance: &Instance,
    n_rotations: usize,
    schedule: AngleSchedule,
) -> Result<ProbMap> {
    if n_rotations == 0 {
        return Err(Error::InvalidConfig("n_rotations must be at least 1".into()));
    }
    let angles = schedule.angles(n_rotations);
    let size = instance.size;
    let mut sum = alloc::vec![0.0f64; size * size];
    for chunk in angles.chunks(TTA_BATCH) {
        let copies: Vec<Instance> = chunk.iter().map(|&a| rotate_instance(instance, a)).collect::<Result<_>>()?;
        let refs: Vec<&Instance> = copies.iter().collect();
        for (map, &a) in predict_maps(graph, &refs)?.into_iter().zip(chunk) {
            let back = if a == 0.0 { map } else { map.rotate_bilinear(-a, 0.0) };
            for (s, &v) in sum.iter_mut().zip(back.as_slice()) {
                *s += v as f64;
            }
        }
    }
    let n = n_rotations as f64;
    let mean: Vec<f32> = sum.into_iter().map(|s| ((s / n) as f32).clamp(0.0, 1.0)).collect();
    ProbMap::new(Grid::from_vec(size, size, mean)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_rotations: usize,
    pub threshold: f64,
    pub schedule: AngleSchedule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_rotations: 50, threshold: 0.5, schedule: AngleSchedule::Even }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rotations == 0 {
            return Err(Error::InvalidConfig("n_rotations must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `{patient_id}/{slice_index}` in evaluation order.
    pub slice_ids: Vec<String>,
    pub per_slice_dice: Vec<f64>,
    pub mean_dice: f64,
    pub confusion: Confusion,
    pub f1: f64,
    pub model: String,
    pub rotations: usize,
    pub threshold: f64,
}

impl MetricsReport {
    /// Assembles a report from per-slice predictions and ground truths.
    pub fn from_predictions(
        slice_ids: Vec<String>,
        preds: &[BinaryMask],
        gts: &[BinaryMask],
        model: String,
        config: &EvalConfig,
    ) -> Result<Self> {
        if slice_ids.len() != preds.len() {
            return Err(Error::DimensionMismatch(format!("{} ids for {} slices", slice_ids.len(), preds.len())));
        }
        if preds.is_empty() {
            return Err(Error::EmptyMasks);
        }
        let (confusion, f1) = detection_stats(preds, gts)?;
        let per_slice_dice: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| dice_slice(p, g)).collect::<Result<_>>()?;
        let mean_dice = per_slice_dice.iter().sum::<f64>() / per_slice_dice.len() as f64;
        Ok(MetricsReport {
            slice_ids,
            per_slice_dice,
            mean_dice,
            confusion,
            f1,
            model,
            rotations: config.n_rotations,
            threshold: config.threshold,
        })
    }
}

/// Probability maps for prepared instances, through TTA unless
/// `n_rotations == 1`.
pub fn predict_instances<T: Real>(graph: &Graph<T>, instances: &[Instance], config: &EvalConfig) -> Result<Vec<ProbMap>> {
    config.validate()?;
    if config.n_rotations == 1 {
        let refs: Vec<&Instance> = instances.iter().collect();
        return predict(graph, &refs);
    }
    instances.iter().map(|inst| tta_predict(graph, inst, config.n_rotations, config.schedule)).collect()
}

/// Scores already prepared instances.
pub fn evaluate_instances<T: Real>(
    graph: &Graph<T>,
    instances: &[Instance],
    slice_ids: Vec<String>,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let maps = predict_instances(graph, instances, config)?;
    let preds: Vec<BinaryMask> = maps.iter().map(|m| binarize(m, config.threshold)).collect();
    let gts: Vec<BinaryMask> = instances.iter().map(|i| BinaryMask::from_nonzero(&i.mask)).collect();
    MetricsReport::from_predictions(slice_ids, &preds, &gts, graph.config().architecture.name().into(), config)
}

/// Prepares every slice of `volumes` with `window` and scores it.
pub fn evaluate_run<T: Real>(
    graph: &Graph<T>,
    volumes: &[Volume],
    window: &CropWindow,
    mode: ChannelMode,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let mut instances = Vec::new();
    let mut ids = Vec::new();
    for v in volumes {
        for i in 0..v.len() {
            instances.push(build_instance(v, i, window, mode)?);
            ids.push(format!("{}/{i}", v.patient_id()));
        }
    }
    evaluate_instances(graph, &instances, ids, config)
}

/// Gray level of ground-truth contour pixels in an overlay.
pub const GT_CONTOUR: u8 = 255;
/// Gray level of prediction contour pixels in an overlay.
pub const PRED_CONTOUR: u8 = 254;
/// Base image gray levels span `0..=OVERLAY_BASE_MAX`.
pub const OVERLAY_BASE_MAX: u8 = 200;

/// Foreground pixels with a 4-neighbour outside the mask or the grid.
pub fn contour(mask: &BinaryMask) -> Grid<bool> {
    let g = mask.grid();
    let (rows, cols) = (g.rows(), g.cols());
    Grid::from_fn(rows, cols, |r, c| {
        if g.get(r, c) == 0 {
            return false;
        }
        r == 0
            || c == 0
            || r + 1 == rows
            || c + 1 == cols
            || g.get(r - 1, c) == 0
            || g.get(r + 1, c) == 0
            || g.get(r, c - 1) == 0
            || g.get(r, c + 1) == 0
    })
}

/// 8-bit overlay of `base` (values in `[0, 1]`) with prediction and
/// ground-truth contours; ground truth wins where both coincide.
pub fn render_overlay(base: &Grid<f32>, pred: &BinaryMask, gt: &BinaryMask) -> Result<Grid<u8>> {
    let same = |m: &Grid<u8>| m.rows() == base.rows() && m.cols() == base.cols();
    if !same(pred.grid()) || !same(gt.grid()) {
        return Err(Error::ShapeMismatch("overlay inputs differ in size".into()));
    }
    let (pc, gc) = (contour(pred), contour(gt));
    Ok(Grid::from_fn(base.rows(), base.cols(), |r, c| {
        if gc.get(r, c) {
            GT_CONTOUR
        } else if pc.get(r, c) {
            PRED_CONTOUR
        } else {
            libm::roundf(base.get(r, c).clamp(0.0, 1.0) * OVERLAY_BASE_MAX as f32) as u8
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: usize, cols: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut g = Grid::filled(rows, cols, 0u8);
        for &(r, c) in on {
            g.set(r, c, 1);
        }
        BinaryMask::new(g).unwrap()
    }

    #[test]
    fn binarize_is_strict() {
        let p = ProbMap::new(Grid::from_vec(1, 3, alloc::vec![0.39, 0.4, 0.41]).unwrap()).unwrap();
        assert_eq!(binarize(&p, 0.4).grid().as_slice(), &[0, 0, 1]);
        let zero = ProbMap::new(Grid::filled(4, 4, 0.0)).unwrap();
        assert!(binarize(&zero, 0.1).is_empty());
        assert!(ProbMap::new(Grid::filled(1, 1, 1.5)).is_err());
    }

    #[test]
    fn dice_conventions() {
        let empty = mask(4, 4, &[]);
        let four = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let two = mask(4, 4, &[(0, 0), (0, 1)]);
        assert_eq!(dice_slice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice_slice(&two, &empty).unwrap(), 0.0);
        assert_eq!(dice_slice(&four, &four).unwrap(), 1.0);
        assert!((dice_slice(&two, &four).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice_slice(&empty, &four).unwrap(), 0.0);
        assert!(dice_slice(&mask(2, 2, &[]), &empty).is_err());
    }

    #[test]
    fn f1_from_published_counts() {
        let c = Confusion { tp: 576, fp: 215, tn: 3417, fn_: 272 };
        assert_eq!(c.f1(), 1152.0 / 1639.0);
        let c = Confusion { tp: 104, fp: 130, tn: 3502, fn_: 744 };
        assert_eq!(c.f1(), 208.0 / 1082.0);
        assert_eq!(Confusion::default().f1(), 0.0);
    }

    #[test]
    fn detection_on_empty_sets() {
        let e = alloc::vec![mask(3, 3, &[]); 5];
        let (c, f1) = detection_stats(&e, &e).unwrap();
        assert_eq!((c.tn, c.total(), f1), (5, 5, 0.0));
        assert!(detection_stats(&e[..2], &e).is_err());
    }

    #[test]
    fn even_angles_include_identity() {
        assert_eq!(AngleSchedule::Even.angles(4), alloc::vec![0.0, 90.0, 180.0, 270.0]);
        let r = AngleSchedule::Random { seed: 3 }.angles(5);
        assert_eq!(r[0], 0.0);
        assert_eq!(r, AngleSchedule::Random { seed: 3 }.angles(5));
        assert!(r.iter().all(|a| (0.0..360.0).contains(a)));
    }

    #[test]
    fn contour_of_square() {
        let m = mask(5, 5, &[(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)]);
        let c = contour(&m);
        assert!(!c.get(2, 2));
        assert_eq!(c.as_slice().iter().filter(|&&b| b).count(), 8);
        let base = Grid::filled(5, 5, 1.0f32);
        let o = render_overlay(&base, &m, &mask(5, 5, &[(1, 1)])).unwrap();
        assert_eq!((o.get(1, 1), o.get(1, 2), o.get(2, 2), o.get(0, 0)), (GT_CONTOUR, PRED_CONTOUR, 200, 200));
    }
}
