//! Core algorithms for slice-wise lung tumor segmentation of CT volumes.
//!
//! Everything here is pure computation over owned buffers: synthetic phantom
//! generation, the 2D discrete wavelet transform, instance preparation,
//! a small reverse-mode autodiff engine with the layers needed by U-Net and
//! MultiResUNet, training, test-time augmentation and the dice/F1 metrics.
//! Persistent storage, configuration and the command line live in the
//! `lungseg` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod grid;
pub mod models;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use grid::Grid;
pub use volume::{Manufacturer, Volume};

/// Side length of every model input and output map.
pub const INSTANCE_SIZE: usize = 128;
