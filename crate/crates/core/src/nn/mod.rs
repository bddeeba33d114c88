//! Dense NHWC tensors, a reverse-mode tape, the layers used by the
//! segmentation networks, their losses and the two optimizers.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference verification.

mod conv;
pub mod loss;
pub mod optim;
mod real;
mod tape;
mod tensor;

pub use loss::{combine_level_losses, deep_supervised_loss, DeepSupervisionSpec, LossKind, SUPERVISION_LEVELS};
pub use optim::{adam_step, effective_rate, sgd_step, AdamState, Algorithm, DecaySchedule, OptimizerConfig};
pub use real::Real;
pub use tape::{BatchNormMode, Gradients, Padding, Tape, Var, BN_EPSILON, BN_MOMENTUM};
pub use tensor::Tensor;
