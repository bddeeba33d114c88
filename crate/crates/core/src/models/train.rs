//! Mini-batch training of a [`Graph`] on prepared instances.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{adam_step, sgd_step, AdamState, Algorithm, DecaySchedule, LossKind, OptimizerConfig, Real, Tape, Tensor};
use crate::pipeline::Instance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 150, batch_size: 8, optimizer: OptimizerConfig::default(), loss: LossKind::Bce, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Mean over batches of the optimized objective (weighted over heads
    /// when deeply supervised).
    pub loss: f64,
    /// Mean over batches of the loss of the final full-resolution head.
    pub final_loss: f64,
    pub learning_rate: f64,
}

/// Max-pools a binary mask down to `size × size`, so any foreground pixel
/// survives at coarse levels.
pub fn downsample_mask(mask: &Grid<u8>, size: usize) -> Result<Grid<u8>> {
    let n = mask.rows();
    if mask.cols() != n || size == 0 || !n.is_multiple_of(size) {
        return Err(Error::ShapeMismatch(format!("cannot pool a {}x{} mask to {size}", mask.rows(), mask.cols())));
    }
    let f = n / size;
    Ok(Grid::from_fn(size, size, |r, c| {
        let any = (0..f).any(|dy| (0..f).any(|dx| mask.get(r * f + dy, c * f + dx) != 0));
        u8::from(any)
    }))
}

/// Stacks instance features into an `N×S×S×C` tensor.
pub fn batch_features<T: Real>(instances: &[&Instance]) -> Result<Tensor<T>> {
    let first = instances.first().ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let (s, d) = (first.size, first.depth());
    let mut values = Vec::with_capacity(instances.len() * s * s * d);
    for inst in instances {
        if inst.size != s || inst.depth() != d {
            return Err(Error::ShapeMismatch("instances of mixed shape in one batch".into()));
        }
        values.extend(inst.features.iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[instances.len(), s, s, d], values)
}

/// Stacks instance masks, pooled to `size`, into an `N×size×size×1` tensor.
pub fn batch_targets<T: Real>(instances: &[&Instance], size: usize) -> Result<Tensor<T>> {
    let mut values = Vec::with_capacity(instances.len() * size * size);
    for inst in instances {
        let m = if inst.mask.rows() == size { inst.mask.clone() } else { downsample_mask(&inst.mask, size)? };
        values.extend(m.as_slice().iter().map(|&v| if v != 0 { T::ONE } else { T::ZERO }));
    }
    Tensor::from_vec(&[instances.len(), size, size, 1], values)
}

/// Optimizer state bound to one graph.
pub struct Trainer<T> {
    config: TrainConfig,
    adam: Vec<Option<AdamState<T>>>,
    epoch: usize,
    iteration: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(graph: &Graph<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = graph
            .parameters()
            .iter()
            .map(|p| (p.trainable && config.optimizer.algorithm == Algorithm::Adam).then(|| AdamState::new(p.tensor.len())))
            .collect();
        Ok(Trainer { config, adam, epoch: 0, iteration: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn decay_counter(&self) -> u64 {
        match self.config.optimizer.schedule {
            DecaySchedule::PerEpoch => self.epoch as u64,
            DecaySchedule::PerIteration => self.iteration,
        }
    }

    /// One forward/backward/update step on a batch; returns the objective
    /// and the final-head loss.
    pub fn step(&mut self, graph: &mut Graph<T>, batch: &[&Instance]) -> Result<(f64, f64)> {
        let input = batch_features::<T>(batch)?;
        let mut tape = Tape::new();
        let fwd = graph.forward(&mut tape, input, Mode::Train)?;
        let heads = graph.heads().to_vec();
        let mut terms = Vec::with_capacity(heads.len());
        let weights: Vec<f64> = match graph.supervision() {
            Some(spec) => spec.weights().to_vec(),
            None => alloc::vec![1.0],
        };
        if weights.len() != heads.len() {
            return Err(Error::LevelCount { expected: weights.len(), got: heads.len() });
        }
        let mut final_loss = 0.0;
        for (i, (head, &w)) in heads.iter().zip(&weights).enumerate() {
            let target = batch_targets::<T>(batch, head.size)?;
            let l = self.config.loss.apply(&mut tape, fwd.outputs[i], &target)?;
            if i == 0 {
                final_loss = tape.value(l).values()[0].to_f64();
            }
            terms.push((l, T::from_f64(w)));
        }
        let total = if terms.len() == 1 { terms[0].0 } else { tape.weighted_sum(&terms)? };
        let loss = tape.value(total).values()[0].to_f64();
        if !loss.is_finite() {
            return Err(Error::InvalidConfig(format!("training diverged: loss {loss}")));
        }
        let mut grads = tape.backward(total)?;
        let t = self.decay_counter();
        let opt = self.config.optimizer;
        for (idx, var) in fwd.params.iter().enumerate() {
            let Some(var) = *var else { continue };
            let Some(g) = grads.take(var) else { continue };
            let values = graph.parameters_mut()[idx].tensor.values_mut();
            match opt.algorithm {
                Algorithm::Adam => {
                    let state = self.adam[idx].as_mut().expect("adam state per trainable parameter");
                    adam_step(values, g.values(), state, &opt, t)?
                }
                Algorithm::Sgd => sgd_step(values, g.values(), &opt, t)?,
            }
        }
        self.iteration += 1;
        Ok((loss, final_loss))
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn run_epoch(&mut self, graph: &mut Graph<T>, data: &[Instance]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let learning_rate = crate::nn::effective_rate(&self.config.optimizer, self.decay_counter());
        let (mut loss, mut final_loss, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, f) = self.step(graph, &batch)?;
            loss += l;
            final_loss += f;
            batches += 1;
        }
        let log = EpochLog {
            epoch: self.epoch,
            loss: loss / batches as f64,
            final_loss: final_loss / batches as f64,
            learning_rate,
        };
        self.epoch += 1;
        Ok(log)
    }
}

/// Trains for `config.epochs` epochs, reporting each finished epoch.
pub fn train<T: Real>(
    graph: &mut Graph<T>,
    data: &[Instance],
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut trainer = Trainer::new(graph, config)?;
    let mut logs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let log = trainer.run_epoch(graph, data)?;
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
