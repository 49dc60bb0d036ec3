//! Geometry-conditioned multi-view PBR material synthesis at desk scale:
//! mesh ingestion, g-buffer rendering, a two-branch material denoiser with a
//! shared reference-attention mask, dual-phase training, UV baking and metrics.

pub mod error;
pub mod image;
pub mod math;
pub mod mesh;
pub mod par;
pub mod raster;

pub use error::{Error, Result};
pub mod bake;
pub mod denoiser;
pub mod material;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod procedural;
pub mod render;
pub mod train;
