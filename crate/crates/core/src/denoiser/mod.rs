//! Multi-view flow-matching denoiser. Albedo and metallic-roughness branches
//! share patch-aligned geometry tokens and joint self-attention with 3D rotary
//! positions; each block then injects a per-channel embedding and lets every
//! branch read the reference image through one attention mask computed from
//! the albedo branch.

pub mod attention;
pub mod cond;
pub mod config;
pub mod model;
pub mod params;
pub mod sample;

pub use attention::{shared_mask_reference_attention, MaskEvent};
pub use cond::{Conditioning, ViewGeometry};
pub use config::DenoiserConfig;
pub use model::{Denoiser, ForwardCache};
pub use params::DenoiserParams;
pub use sample::{flow_interpolate, integrate, sample, SampleSettings, SampledViews, Solver, VelocityField};

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint;

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointMeta {
    format: String,
    config: DenoiserConfig,
    trained_steps: u64,
}

const FORMAT: &str = "matforge-denoiser/1";

impl Denoiser {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            format: FORMAT.into(),
            config: self.config.clone(),
            trained_steps: self.trained_steps,
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        checkpoint::encode(&meta, &self.params.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Denoiser> {
        let (meta, tensors) = checkpoint::decode(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {}", meta.format)));
        }
        meta.config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Denoiser::zeros(meta.config)?;
        model.params.load_named(tensors)?;
        model.trained_steps = meta.trained_steps;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Denoiser> {
        Denoiser::from_bytes(&std::fs::read(path)?)
    }
}
