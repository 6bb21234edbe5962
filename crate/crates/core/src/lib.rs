#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Shape fitting with 3D Gaussian mixtures through differentiable ray
//! rendering.
//!
//! The crate covers the full pipeline: per-ray shading in weighted and
//! alpha-composited modes, losses over masks, colors and optical flow with
//! exact gradients, an Adam-driven fitting loop with prune/split
//! reparameterization, oriented point cloud export and conversion of 3D
//! Gaussian Splatting checkpoints.

pub mod bench;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod diffcheck;
mod error;
pub mod export;
pub mod fit;
pub mod formats;
pub mod gmm;
pub mod interop;
pub mod metrics;
pub mod render;
pub mod reparam;
pub mod synth;

pub use error::{Error, Result};
