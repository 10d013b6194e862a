//! Compute core for 2D brain-tumor segmentation: a tape-based autodiff
//! engine, an attention-gated U-Net, segmentation losses and metrics, the
//! slice preprocessing pipeline and Grad-CAM explanation kernels.
//!
//! The crate is `no_std` compatible (with `alloc`); file formats, training
//! orchestration and the CLI live in the companion `brainseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod phantom;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use math::Element;
pub use tensor::{LabelMap, Tensor};
