//! Two-stream texture/structure image inpainting.
//!
//! The generator runs two coupled partial-convolution U-Nets, one over the
//! corrupted image and one over its corrupted edge and grayscale maps, and
//! merges them through gated fusion and contextual feature aggregation. A
//! two-branch patch discriminator and a five-term loss drive training.

pub mod bigff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cfa;
pub mod datapipe;
pub mod discriminator;
pub mod evaluate;
pub mod error;
pub mod generator;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pconv;
pub mod service;
pub mod trainer;

pub use error::{Error, Result};
