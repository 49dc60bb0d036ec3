//! UV-space material textures and per-view material images.

use crate::image::{Image, Mask};
use crate::render::{GBuffer, MaterialSample};

/// Baked or ground-truth textures. `mr` packs roughness in G and metallic in
/// B (R = 0), as glTF expects.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSet {
    pub albedo: Image,
    pub mr: Image,
    pub texel_mask: Mask,
}

impl MaterialSet {
    pub fn constant(resolution: usize, albedo: [f64; 3], roughness: f64, metallic: f64) -> MaterialSet {
        let a = albedo.map(|v| v as f32);
        MaterialSet {
            albedo: Image::from_fn(resolution, resolution, 3, |_, _| a.to_vec()),
            mr: Image::from_fn(resolution, resolution, 3, |_, _| {
                vec![0.0, roughness as f32, metallic as f32]
            }),
            texel_mask: Mask {
                width: resolution,
                height: resolution,
                data: vec![true; resolution * resolution],
            },
        }
    }

    pub fn resolution(&self) -> usize {
        self.albedo.width
    }

    pub fn sample_uv(&self, u: f64, v: f64) -> MaterialSample {
        let (mut a, mut m) = ([0f32; 3], [0f32; 3]);
        self.albedo.sample_uv(u, v, &mut a);
        self.mr.sample_uv(u, v, &mut m);
        MaterialSample {
            albedo: a.map(|c| c as f64),
            roughness: m[1] as f64,
            metallic: m[2] as f64,
        }
    }
}

/// Per-view albedo and MR images aligned with their g-buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialViews {
    pub albedo: Vec<Image>,
    pub mr: Vec<Image>,
    pub gbuffers: Vec<GBuffer>,
}

impl MaterialViews {
    pub fn len(&self) -> usize {
        self.albedo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.albedo.is_empty()
    }

    /// Views reordered so that output view `i` is input view `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> MaterialViews {
        MaterialViews {
            albedo: order.iter().map(|&i| self.albedo[i].clone()).collect(),
            mr: order.iter().map(|&i| self.mr[i].clone()).collect(),
            gbuffers: order.iter().map(|&i| self.gbuffers[i].clone()).collect(),
        }
    }
}
