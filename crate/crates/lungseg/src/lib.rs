//! File formats, run configuration and the command-line driver over
//! [`lungseg_core`].

pub mod commands;
pub mod config;
pub mod datastore;
pub mod error;
pub mod phantom;
pub mod report;

pub use config::RunConfig;
pub use error::{Error, Result};
