//! File formats, configuration, training orchestration and the command-line
//! interface for the brain-tumor segmentation engine. The numerics live in
//! `brainseg-core`.

pub use brainseg_core as core;

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod nifti;
pub mod ppm;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
