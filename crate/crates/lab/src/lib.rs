//! File formats, dataset IO, rendering, parallel runners and the command
//! line for `edgelab-core`.

pub mod checkpoint;
pub mod cifar;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod etc;
pub mod imageio;
pub mod reports;
pub mod runners;

pub use error::{LabError, Result};
