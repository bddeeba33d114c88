//! Loss selection and the deep-supervision weighting.

use alloc::format;
use alloc::vec::Vec;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Number of supervised outputs in a deeply supervised network.
pub const SUPERVISION_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Bce,
    SoftDice,
}

impl LossKind {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
        match self {
            LossKind::Bce => tape.bce_loss(pred, target),
            LossKind::SoftDice => tape.soft_dice_loss(pred, target),
        }
    }
}

/// Loss weights for the five outputs, ordered final layer → deepest.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSupervisionSpec {
    weights: [f64; SUPERVISION_LEVELS],
}

impl DeepSupervisionSpec {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let w: [f64; SUPERVISION_LEVELS] = weights
            .try_into()
            .map_err(|_| Error::LevelCount { expected: SUPERVISION_LEVELS, got: weights.len() })?;
        if w[0] != 1.0 {
            return Err(Error::InvalidConfig(format!("first supervision weight must be 1.0, got {}", w[0])));
        }
        if w.iter().any(|&v| !(v > 0.0 && v <= 1.0)) || w.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidConfig(format!(
                "supervision weights {w:?} must be strictly descending within (0, 1]"
            )));
        }
        Ok(DeepSupervisionSpec { weights: w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for DeepSupervisionSpec {
    fn default() -> Self {
        DeepSupervisionSpec { weights: [1.0, 0.8, 0.6, 0.4, 0.2] }
    }
}

/// `Σ weightₖ · lossₖ` on already computed per-level losses.
pub fn combine_level_losses(losses: &[f64], spec: &DeepSupervisionSpec) -> Result<f64> {
    if losses.len() != SUPERVISION_LEVELS {
        return Err(Error::LevelCount { expected: SUPERVISION_LEVELS, got: losses.len() });
    }
    Ok(losses.iter().zip(spec.weights()).map(|(l, w)| l * w).sum())
}

/// Weighted per-level loss recorded on the tape.
pub fn deep_supervised_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: &[Var],
    targets: &[Tensor<T>],
    spec: &DeepSupervisionSpec,
    kind: LossKind,
) -> Result<Var> {
    if outputs.len() != SUPERVISION_LEVELS || targets.len() != SUPERVISION_LEVELS {
        return Err(Error::LevelCount {
            expected: SUPERVISION_LEVELS,
            got: if outputs.len() != SUPERVISION_LEVELS { outputs.len() } else { targets.len() },
        });
    }
    let mut terms = Vec::with_capacity(SUPERVISION_LEVELS);
    for ((&out, target), &w) in outputs.iter().zip(targets).zip(spec.weights()) {
        terms.push((kind.apply(tape, out, target)?, T::from_f64(w)));
    }
    tape.weighted_sum(&terms)
}
