//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key is optional; missing keys take the defaults of
//! [`RunConfig::default`]. Real values may be written as fractions
//! (`decay = 0.01/150`). [`RunConfig::to_canonical`] lists every key in a
//! fixed order and parses back to an identical config.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use lungseg_core::eval::{AngleSchedule, EvalConfig};
use lungseg_core::models::train::TrainConfig;
use lungseg_core::models::{Architecture, GraphConfig};
use lungseg_core::nn::{Algorithm, DecaySchedule, DeepSupervisionSpec, LossKind, OptimizerConfig};
use lungseg_core::phantom::PhantomSpec;
use lungseg_core::pipeline::{AugmentConfig, ChannelMode};
use lungseg_core::INSTANCE_SIZE;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset root holding one directory per patient.
    pub dataset_path: PathBuf,
    pub model: Model,
    pub base_filters: usize,
    /// MultiRes width multiplier.
    pub alpha: f64,
    pub deep_supervision: bool,
    pub ds_weights: [f64; 5],
    pub channels: ChannelMode,
    pub loss: LossKind,
    pub optimizer: Algorithm,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_schedule: DecaySchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Add one flipped or rotated copy of every training instance.
    pub augment: bool,
    /// Pixels added around the training-mask bounding box.
    pub crop_margin: usize,
    pub folds: usize,
    /// Fold whose patients are held out for evaluation.
    pub holdout_fold: usize,
    pub seed: u64,
    pub tta_rotations: usize,
    pub tta_angles: TtaAngles,
    pub threshold: f64,
    /// Epochs between training-set dice evaluations in the training log;
    /// 0 evaluates only after the last epoch.
    pub dice_every: usize,
    pub weights_path: PathBuf,
    pub report_path: PathBuf,
    /// Where evaluation overlays go; empty disables them.
    pub overlay_dir: PathBuf,
    pub phantom_patients: usize,
    pub phantom_slices: usize,
    pub phantom_size: usize,
    pub phantom_cms_fraction: f64,
    pub phantom_tumor_probability: f64,
    pub phantom_radius_min: f64,
    pub phantom_radius_max: f64,
    pub phantom_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    UNet,
    MultiRes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtaAngles {
    Even,
    /// Seeded from the run seed.
    Random,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phantom = PhantomSpec::default();
        let opt = OptimizerConfig::default();
        let train = TrainConfig::default();
        let eval = EvalConfig::default();
        RunConfig {
            dataset_path: PathBuf::from("data"),
            model: Model::MultiRes,
            base_filters: 8,
            alpha: lungseg_core::models::DEFAULT_ALPHA,
            deep_supervision: true,
            ds_weights: [1.0, 0.8, 0.6, 0.4, 0.2],
            channels: ChannelMode::Five,
            loss: LossKind::Bce,
            optimizer: opt.algorithm,
            learning_rate: opt.learning_rate,
            decay: opt.decay,
            decay_schedule: opt.schedule,
            epochs: train.epochs,
            batch_size: train.batch_size,
            augment: true,
            crop_margin: 16,
            folds: 5,
            holdout_fold: 0,
            seed: phantom.seed,
            tta_rotations: eval.n_rotations,
            tta_angles: TtaAngles::Even,
            threshold: eval.threshold,
            dice_every: 1,
            weights_path: PathBuf::from("weights.lseg"),
            report_path: PathBuf::from("report.csv"),
            overlay_dir: PathBuf::new(),
            phantom_patients: phantom.n_patients,
            phantom_slices: phantom.slices_per_patient,
            phantom_size: phantom.slice_size,
            phantom_cms_fraction: phantom.manufacturer_split,
            phantom_tumor_probability: phantom.tumor_probability,
            phantom_radius_min: phantom.tumor_radius_range.0,
            phantom_radius_max: phantom.tumor_radius_range.1,
            phantom_noise: phantom.noise_sigma,
        }
    }
}

fn parse_real(s: &str) -> Option<f64> {
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    v.is_finite().then_some(v)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn enum_value<T: Copy>(s: &str, options: &[(&str, T)]) -> Option<T> {
    options.iter().find(|(n, _)| *n == s).map(|&(_, v)| v)
}

const MODELS: &[(&str, Model)] = &[("unet", Model::UNet), ("multires", Model::MultiRes)];
const CHANNELS: &[(&str, ChannelMode)] = &[("five", ChannelMode::Five), ("three", ChannelMode::Three)];
const LOSSES: &[(&str, LossKind)] = &[("bce", LossKind::Bce), ("soft_dice", LossKind::SoftDice)];
const OPTIMIZERS: &[(&str, Algorithm)] = &[("adam", Algorithm::Adam), ("sgd", Algorithm::Sgd)];
const SCHEDULES: &[(&str, DecaySchedule)] =
    &[("epoch", DecaySchedule::PerEpoch), ("iteration", DecaySchedule::PerIteration)];
const ANGLES: &[(&str, TtaAngles)] = &[("even", TtaAngles::Even), ("random", TtaAngles::Random)];

fn name_of<T: Copy + PartialEq>(v: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, o)| *o == v).map(|(n, _)| *n).expect("every variant is named")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: line_no, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key}")));
            }
            c.set(key, value).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let bad = || format!("invalid value {v:?} for {key}");
        let real = || parse_real(v).ok_or_else(bad);
        let count = || v.parse::<usize>().map_err(|_| bad());
        let flag = || parse_bool(v).ok_or_else(bad);
        match key {
            "dataset_path" => self.dataset_path = v.into(),
            "model" => self.model = enum_value(v, MODELS).ok_or_else(bad)?,
            "base_filters" => self.base_filters = count()?,
            "alpha" => self.alpha = real()?,
            "deep_supervision" => self.deep_supervision = flag()?,
            "ds_weights" => {
                let w: Vec<f64> = v.split(',').map(|s| parse_real(s.trim())).collect::<Option<_>>().ok_or_else(bad)?;
                self.ds_weights = w.try_into().map_err(|_| format!("ds_weights needs 5 values, got {v:?}"))?;
            }
            "channels" => self.channels = enum_value(v, CHANNELS).ok_or_else(bad)?,
            "loss" => self.loss = enum_value(v, LOSSES).ok_or_else(bad)?,
            "optimizer" => self.optimizer = enum_value(v, OPTIMIZERS).ok_or_else(bad)?,
            "learning_rate" => self.learning_rate = real()?,
            "decay" => self.decay = real()?,
            "decay_schedule" => self.decay_schedule = enum_value(v, SCHEDULES).ok_or_else(bad)?,
            "epochs" => self.epochs = count()?,
            "batch_size" => self.batch_size = count()?,
            "augment" => self.augment = flag()?,
            "crop_margin" => self.crop_margin = count()?,
            "folds" => self.folds = count()?,
            "holdout_fold" => self.holdout_fold = count()?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "tta_rotations" => self.tta_rotations = count()?,
            "tta_angles" => self.tta_angles = enum_value(v, ANGLES).ok_or_else(bad)?,
            "threshold" => self.threshold = real()?,
            "dice_every" => self.dice_every = count()?,
            "weights_path" => self.weights_path = v.into(),
            "report_path" => self.report_path = v.into(),
            "overlay_dir" => self.overlay_dir = v.into(),
            "phantom_patients" => self.phantom_patients = count()?,
            "phantom_slices" => self.phantom_slices = count()?,
            "phantom_size" => self.phantom_size = count()?,
            "phantom_cms_fraction" => self.phantom_cms_fraction = real()?,
            "phantom_tumor_probability" => self.phantom_tumor_probability = real()?,
            "phantom_radius_min" => self.phantom_radius_min = real()?,
            "phantom_radius_max" => self.phantom_radius_max = real()?,
            "phantom_noise" => self.phantom_noise = real()?,
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    /// Every key in canonical order.
    pub fn to_canonical(&self) -> String {
        let path = |p: &Path| p.to_string_lossy().into_owned();
        let weights: Vec<String> = self.ds_weights.iter().map(f64::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("dataset_path", path(&self.dataset_path)),
            ("model", name_of(self.model, MODELS).into()),
            ("base_filters", self.base_filters.to_string()),
            ("alpha", self.alpha.to_string()),
            ("deep_supervision", self.deep_supervision.to_string()),
            ("ds_weights", weights.join(", ")),
            ("channels", name_of(self.channels, CHANNELS).into()),
            ("loss", name_of(self.loss, LOSSES).into()),
            ("optimizer", name_of(self.optimizer, OPTIMIZERS).into()),
            ("learning_rate", self.learning_rate.to_string()),
            ("decay", self.decay.to_string()),
            ("decay_schedule", name_of(self.decay_schedule, SCHEDULES).into()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("augment", self.augment.to_string()),
            ("crop_margin", self.crop_margin.to_string()),
            ("folds", self.folds.to_string()),
            ("holdout_fold", self.holdout_fold.to_string()),
            ("seed", self.seed.to_string()),
            ("tta_rotations", self.tta_rotations.to_string()),
            ("tta_angles", name_of(self.tta_angles, ANGLES).into()),
            ("threshold", self.threshold.to_string()),
            ("dice_every", self.dice_every.to_string()),
            ("weights_path", path(&self.weights_path)),
            ("report_path", path(&self.report_path)),
            ("overlay_dir", path(&self.overlay_dir)),
            ("phantom_patients", self.phantom_patients.to_string()),
            ("phantom_slices", self.phantom_slices.to_string()),
            ("phantom_size", self.phantom_size.to_string()),
            ("phantom_cms_fraction", self.phantom_cms_fraction.to_string()),
            ("phantom_tumor_probability", self.phantom_tumor_probability.to_string()),
            ("phantom_radius_min", self.phantom_radius_min.to_string()),
            ("phantom_radius_max", self.phantom_radius_max.to_string()),
            ("phantom_noise", self.phantom_noise.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config { line: 0, message: m });
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.folds == 0 || self.holdout_fold >= self.folds {
            return fail(format!("holdout_fold {} needs 0 <= holdout_fold < folds = {}", self.holdout_fold, self.folds));
        }
        if self.tta_rotations == 0 {
            return fail("tta_rotations must be at least 1".into());
        }
        if self.path_has_comment(&self.dataset_path)
            || self.path_has_comment(&self.weights_path)
            || self.path_has_comment(&self.report_path)
            || self.path_has_comment(&self.overlay_dir)
        {
            return fail("paths may not contain `#`".into());
        }
        self.optimizer_config().validate()?;
        self.train_config().validate()?;
        self.ds_spec()?;
        self.phantom_spec().validate()?;
        Ok(())
    }

    fn path_has_comment(&self, p: &Path) -> bool {
        p.to_string_lossy().contains('#')
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            n_patients: self.phantom_patients,
            slices_per_patient: self.phantom_slices,
            slice_size: self.phantom_size,
            manufacturer_split: self.phantom_cms_fraction,
            tumor_probability: self.phantom_tumor_probability,
            tumor_radius_range: (self.phantom_radius_min, self.phantom_radius_max),
            noise_sigma: self.phantom_noise,
            seed: self.seed,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self.model {
            Model::UNet => Architecture::UNet,
            Model::MultiRes => Architecture::MultiResUNet { alpha: self.alpha },
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            architecture: self.architecture(),
            in_channels: self.channels.depth(),
            base_filters: self.base_filters,
            input_size: INSTANCE_SIZE,
            seed: self.seed,
        }
    }

    pub fn ds_spec(&self) -> Result<DeepSupervisionSpec> {
        Ok(DeepSupervisionSpec::new(&self.ds_weights)?)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: self.optimizer,
            learning_rate: self.learning_rate,
            decay: self.decay,
            schedule: self.decay_schedule,
            ..OptimizerConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer_config(),
            loss: self.loss,
            seed: self.seed,
        }
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.augment.then(AugmentConfig::default)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            n_rotations: self.tta_rotations,
            threshold: self.threshold,
            schedule: match self.tta_angles {
                TtaAngles::Even => AngleSchedule::Even,
                TtaAngles::Random => AngleSchedule::Random { seed: self.seed },
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_canonical();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(RunConfig::parse(&text).unwrap().to_canonical(), text);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn reference_training_settings() {
        let c = RunConfig::parse(
            "model = multires\ndeep_supervision = true # heads on\noptimizer = adam\nlearning_rate = 0.01\n\
             decay = 0.01/150\nds_weights = 1.0, 0.8, 0.6, 0.4, 0.2\n",
        )
        .unwrap();
        assert_eq!(c.decay, 0.01 / 150.0);
        assert_eq!(c.ds_weights, [1.0, 0.8, 0.6, 0.4, 0.2]);
        assert_eq!(RunConfig::parse(&c.to_canonical()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "threshold = 1.0",
            "threshold = 0",
            "model = resnet",
            "epochs = -1",
            "nonsense = 3",
            "seed = 1\nseed = 2",
            "just words",
            "ds_weights = 1, 0.5",
            "ds_weights = 1, 0.9, 0.9, 0.4, 0.2",
            "learning_rate = 0",
            "folds = 3\nholdout_fold = 3",
            "decay = 1/0",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
        match RunConfig::parse("epochs = 3\nmodel = x") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
