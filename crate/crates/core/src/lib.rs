//! Multimodal gaze estimation from RGB eye patches and Gaussian eye-landmark
//! heatmaps: a two-stream residual CNN whose streams exchange channel
//! recalibration signals (multimodal squeeze-excitation) before being fused
//! and regressed to pitch/yaw gaze angles.
//!
//! The crate covers the whole pipeline: landmark heatmaps and patch geometry
//! ([`heatmap`]), a small differentiable substrate with gradient checks
//! ([`nn`]), the fusion blocks ([`fusion`]), the model variants used for
//! ablations ([`model`]), dataset ingestion and a synthetic eye generator
//! ([`data`]), and training/evaluation ([`trainer`]).

#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod heatmap;
pub mod loss;
pub mod model;
pub mod nn;
pub mod trainer;
pub mod verify;

pub use error::{FlameError, Result};
