//! The four subcommands as library functions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lungseg_core::eval::{self, binarize, render_overlay, BinaryMask, MetricsReport};
use lungseg_core::models::train::{EpochLog, Trainer};
use lungseg_core::models::{attach_deep_supervision, build_graph, Graph};
use lungseg_core::pipeline::{
    build_volume_instances, compute_crop_window, expand_training_set, split_folds, CropWindow, Instance,
};
use lungseg_core::Volume;

use crate::config::RunConfig;
use crate::datastore::{load_weights, read_dataset, save_weights, write_png};
use crate::error::{Error, Result};
use crate::phantom::{generate_dataset, DatasetSummary};
use crate::report::{comparison_table, read_report, write_report};

/// Dataset partition used by both training and evaluation.
pub struct Split {
    pub train: Vec<Volume>,
    pub test: Vec<Volume>,
    /// Derived from the training masks only.
    pub window: CropWindow,
}

pub fn split_dataset(config: &RunConfig, volumes: Vec<Volume>) -> Result<Split> {
    let ids: Vec<&str> = volumes.iter().map(|v| v.patient_id()).collect();
    let folds = split_folds(&ids, config.folds, config.seed)?;
    let (train_ids, test_ids) = folds.partition(config.holdout_fold)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for v in volumes {
        let id = v.patient_id().to_string();
        if test_ids.contains(&id) {
            test.push(v.clone());
        }
        if train_ids.contains(&id) {
            train.push(v);
        }
    }
    let window = compute_crop_window(train.iter().flat_map(|v| v.masks().iter()), config.crop_margin)?;
    Ok(Split { train, test, window })
}

pub fn instances(config: &RunConfig, volumes: &[Volume], window: &CropWindow) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for v in volumes {
        out.extend(build_volume_instances(v, window, config.channels)?);
    }
    Ok(out)
}

pub fn slice_ids(volumes: &[Volume]) -> Vec<String> {
    volumes.iter().flat_map(|v| (0..v.len()).map(move |i| format!("{}/{i}", v.patient_id()))).collect()
}

/// Untrained network for `config`, with deep supervision when enabled.
pub fn build_model(config: &RunConfig) -> Result<Graph<f32>> {
    let graph = build_graph::<f32>(config.graph_config())?;
    Ok(if config.deep_supervision { attach_deep_supervision(graph, config.ds_spec()?)? } else { graph })
}

pub fn cmd_phantom(config: &RunConfig) -> Result<DatasetSummary> {
    let summary = generate_dataset(&config.phantom_spec(), &config.dataset_path)?;
    info!("wrote {} patients to {}", summary.patients(), config.dataset_path.display());
    Ok(summary)
}

/// Mean plain-inference dice over `data` at the configured threshold.
pub fn training_dice(graph: &Graph<f32>, data: &[Instance], threshold: f64) -> Result<f64> {
    let cfg = eval::EvalConfig { n_rotations: 1, threshold, ..eval::EvalConfig::default() };
    let ids = (0..data.len()).map(|i| i.to_string()).collect();
    Ok(eval::evaluate_instances(graph, data, ids, &cfg)?.mean_dice)
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    /// Training-set dice per logged epoch.
    pub dice: Vec<(usize, f64)>,
    pub log_path: PathBuf,
}

/// `{weights_path}.log.csv`
pub fn log_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let split = split_dataset(config, read_dataset(&config.dataset_path)?)?;
    let originals = instances(config, &split.train, &split.window)?;
    let data = match config.augment_config() {
        Some(aug) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1);
            expand_training_set(&originals, &aug, &mut rng)
        }
        None => originals.clone(),
    };
    info!(
        "training on {} patients, {} instances, crop window {:?}",
        split.train.len(),
        data.len(),
        split.window
    );
    let mut graph = build_model(config)?;
    let mut trainer = Trainer::new(&graph, config.train_config())?;
    let log_path = log_path(&config.weights_path);
    let mut log = String::from("epoch,loss,final_loss,learning_rate,train_dice\n");
    let (mut epochs, mut dice) = (Vec::new(), Vec::new());
    for e in 0..config.epochs {
        let entry = trainer.run_epoch(&mut graph, &data)?;
        let last = e + 1 == config.epochs;
        let due = config.dice_every > 0 && (e + 1) % config.dice_every == 0;
        let d = if due || last { Some(training_dice(&graph, &originals, config.threshold)?) } else { None };
        info!(
            "epoch {:>4}  loss {:.5}  final head {:.5}  lr {:.6}{}",
            e + 1,
            entry.loss,
            entry.final_loss,
            entry.learning_rate,
            d.map(|d| format!("  train dice {d:.4}")).unwrap_or_default()
        );
        log.push_str(&format!(
            "{},{},{},{},{}\n",
            e + 1,
            entry.loss,
            entry.final_loss,
            entry.learning_rate,
            d.map(|d| d.to_string()).unwrap_or_default()
        ));
        if let Some(d) = d {
            dice.push((e + 1, d));
        }
        epochs.push(entry);
    }
    save_weights(&graph, &config.weights_path)?;
    fs::write(&log_path, log).map_err(Error::io(&log_path))?;
    Ok(TrainOutcome { epochs, dice, log_path })
}

/// Scores the held-out patients and writes the report CSV (and overlays
/// when `overlay_dir` is set).
pub fn cmd_eval(config: &RunConfig) -> Result<MetricsReport> {
    let split = split_dataset(config, read_dataset(&config.dataset_path)?)?;
    let mut graph = build_model(config)?;
    load_weights(&config.weights_path, &mut graph)?;
    let data = instances(config, &split.test, &split.window)?;
    let eval_cfg = config.eval_config();
    let maps = eval::predict_instances(&graph, &data, &eval_cfg)?;
    let preds: Vec<BinaryMask> = maps.iter().map(|m| binarize(m, eval_cfg.threshold)).collect();
    let gts: Vec<BinaryMask> = data.iter().map(|i| BinaryMask::from_nonzero(&i.mask)).collect();
    let ids = slice_ids(&split.test);
    let model = graph.config().architecture.name().to_string();
    let report = MetricsReport::from_predictions(ids.clone(), &preds, &gts, model, &eval_cfg)?;
    write_report(&report, &config.report_path)?;
    if !config.overlay_dir.as_os_str().is_empty() {
        fs::create_dir_all(&config.overlay_dir).map_err(Error::io(&config.overlay_dir))?;
        for (((id, inst), p), g) in ids.iter().zip(&data).zip(&preds).zip(&gts) {
            if p.is_empty() && g.is_empty() {
                continue;
            }
            let image = render_overlay(&inst.channel(0), p, g)?;
            write_png(&image, &config.overlay_dir.join(format!("{}.png", id.replace('/', "_"))))?;
        }
    }
    info!(
        "mean dice {:.4}  f1 {:.4}  ({} slices, {} rotations, threshold {})",
        report.mean_dice,
        report.f1,
        report.per_slice_dice.len(),
        report.rotations,
        report.threshold
    );
    Ok(report)
}

pub fn cmd_report(paths: &[PathBuf], out: &mut impl Write) -> Result<()> {
    if paths.is_empty() {
        return Err(Error::Usage("report needs at least one CSV path".into()));
    }
    let runs = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), read_report(p)?)))
        .collect::<Result<Vec<_>>>()?;
    out.write_all(comparison_table(&runs).as_bytes()).map_err(Error::io("<stdout>"))
}
