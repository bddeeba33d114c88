//! Plain SGD and bias-corrected Adam with inverse-time learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    Adam,
    Sgd,
}

/// What the decay counter `t` in `lr / (1 + decay·t)` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecaySchedule {
    #[default]
    PerEpoch,
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub decay: f64,
    pub schedule: DecaySchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            learning_rate: 0.01,
            decay: 0.01 / 150.0,
            schedule: DecaySchedule::PerEpoch,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("decay {} must be non-negative", self.decay)));
        }
        Ok(())
    }
}

/// `learning_rate / (1 + decay · t)`.
pub fn effective_rate(cfg: &OptimizerConfig, t: u64) -> f64 {
    cfg.learning_rate / (1.0 + cfg.decay * t as f64)
}

fn check(params: &[impl Copy], grads: &[impl Copy]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    Ok(())
}

/// One plain descent step at the rate for decay counter `t`.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], cfg: &OptimizerConfig, t: u64) -> Result<()> {
    check(params, grads)?;
    let lr = T::from_f64(effective_rate(cfg, t));
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    steps: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![T::ZERO; len], v: vec![T::ZERO; len], steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// One bias-corrected Adam step at the rate for decay counter `t`.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
    t: u64,
) -> Result<()> {
    check(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!("adam state for {} values, got {}", state.m.len(), params.len())));
    }
    state.steps += 1;
    let n = state.steps as f64;
    let lr = effective_rate(cfg, t);
    let c1 = 1.0 - libm::pow(cfg.beta1, n);
    let c2 = 1.0 - libm::pow(cfg.beta2, n);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (inv_c1, inv_c2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(cfg.epsilon));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::ONE - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::ONE - b2) * g * g;
        let m_hat = state.m[i] * inv_c1;
        let v_hat = state.v[i] * inv_c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters() {
        let cfg = OptimizerConfig::default();
        let mut p = [0.3f64, -1.2, 4.0];
        sgd_step(&mut p, &[0.0; 3], &cfg, 3).unwrap();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, &cfg, 3).unwrap();
        assert_eq!(p, [0.3, -1.2, 4.0]);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let cfg = OptimizerConfig { decay: 0.0, ..OptimizerConfig::default() };
        let mut p = [0.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &cfg, 0).unwrap();
        let want = 0.01 / (1.0 + 1e-8);
        assert!((p[0] + want).abs() < 1e-15, "{}", p[0]);
        assert!((-p[0] - 0.00999999999).abs() < 1e-10);
    }

    #[test]
    fn decay_convention() {
        let cfg = OptimizerConfig::default();
        let lr = effective_rate(&cfg, 150);
        assert!((lr - 0.01 / 1.01).abs() < 1e-15);
        assert!((lr - 0.009901).abs() < 1e-6);
        assert_eq!(effective_rate(&cfg, 0), 0.01);
    }

    #[test]
    fn sgd_is_plain_descent() {
        let cfg = OptimizerConfig { algorithm: Algorithm::Sgd, learning_rate: 0.5, decay: 0.0, ..OptimizerConfig::default() };
        let mut p = [1.0f32, 2.0];
        sgd_step(&mut p, &[2.0, -4.0], &cfg, 0).unwrap();
        assert_eq!(p, [0.0, 4.0]);
    }

    #[test]
    fn mismatched_lengths_fail() {
        let cfg = OptimizerConfig::default();
        assert!(sgd_step(&mut [0.0f32; 2], &[0.0; 3], &cfg, 0).is_err());
        let mut st = AdamState::new(4);
        assert!(adam_step(&mut [0.0f32; 2], &[0.0; 2], &mut st, &cfg, 0).is_err());
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() }.validate().is_err());
        assert!(OptimizerConfig { decay: -1.0, ..OptimizerConfig::default() }.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
