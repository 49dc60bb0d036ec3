use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Model-space view resolution (square).
    pub image_size: usize,
    pub patch: usize,
    pub width: usize,
    pub depth: usize,
    /// Hidden width of the per-branch FFN as a multiple of `width`.
    pub ffn_mult: usize,
    pub views: usize,
    /// Adds a third output branch predicting shading normals.
    pub normal_channel: bool,
    /// Leading channels rotated by the 3-axis rotary embedding.
    pub rotary_dims: usize,
    /// Object-space coordinates are multiplied by this before rotary encoding.
    pub rope_scale: f64,
    pub rope: bool,
    /// Joint self-attention over all branches' tokens.
    pub self_attention: bool,
    /// Sin/cos frequency pairs of the time features.
    pub time_frequencies: usize,
    pub init_std: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_size: 64,
            patch: 16,
            width: 64,
            depth: 4,
            ffn_mult: 2,
            views: 6,
            normal_channel: false,
            rotary_dims: 60,
            rope_scale: 16.0,
            rope: true,
            self_attention: true,
            time_frequencies: 8,
            init_std: 0.02,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return bad(format!(
                "image_size {} is not a multiple of patch {}",
                self.image_size, self.patch
            ));
        }
        if self.width == 0 || self.depth == 0 || self.ffn_mult == 0 || self.views == 0 {
            return bad("width, depth, ffn_mult and views must be positive".into());
        }
        if self.rotary_dims % 6 != 0 || self.rotary_dims > self.width {
            return Err(Error::IncompatibleWidth(self.width));
        }
        if !(self.rope_scale.is_finite() && self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("rope_scale and init_std must be finite".into());
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<Channel> {
        let n = if self.normal_channel { 3 } else { 2 };
        Channel::ALL[..n].to_vec()
    }

    /// Patch tokens along one image side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn tokens_per_view(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn tokens(&self) -> usize {
        self.views * self.tokens_per_view()
    }

    /// Values per token for a branch carrying `c` values per pixel.
    pub fn patch_dim(&self, c: usize) -> usize {
        self.patch * self.patch * c
    }

    pub fn time_features(&self) -> usize {
        2 * self.time_frequencies
    }
}
