//! Conversion between per-view images and token matrices, and assembly of the
//! geometry / position / reference conditioning.

use super::config::DenoiserConfig;
use super::params::{GEOMETRY_CHANNELS, REFERENCE_CHANNELS};
use crate::error::{Error, Result};
use crate::image::{CropWindow, Image, Mask};
use crate::math::Vec3;
use crate::nn::Tensor;
use crate::render::{Camera, GBuffer};

/// Depth of the camera-ray point assigned to tokens that see no surface.
pub const FALLBACK_DEPTH: f64 = 0.5;

/// Splits `img` into `patch × patch` tokens (row-major over the patch grid),
/// taking `channels` of every pixel, each mapped from [0, 1] to [-1, 1].
pub fn patchify(img: &Image, patch: usize, channels: &[usize]) -> Tensor {
    let grid = img.width / patch;
    let dim = patch * patch * channels.len();
    let mut data = Vec::with_capacity(grid * grid * dim);
    for ty in 0..grid {
        for tx in 0..grid {
            for py in 0..patch {
                for px in 0..patch {
                    let p = img.pixel(tx * patch + px, ty * patch + py);
                    data.extend(channels.iter().map(|&c| 2.0 * p[c] as f64 - 1.0));
                }
            }
        }
    }
    Tensor::new(&[grid * grid, dim], data).expect("patch layout")
}

/// Inverse of [`patchify`] into a 3-channel image; channels not listed stay 0.
/// Values are mapped back to [0, 1] and clamped.
pub fn unpatchify(tokens: &Tensor, size: usize, patch: usize, channels: &[usize]) -> Image {
    let grid = size / patch;
    let mut img = Image::new(size, size, 3);
    for ty in 0..grid {
        for tx in 0..grid {
            let row = tokens.row(ty * grid + tx);
            let mut it = row.iter();
            for py in 0..patch {
                for px in 0..patch {
                    let p = img.pixel_mut(tx * patch + px, ty * patch + py);
                    for &c in channels {
                        p[c] = ((*it.next().unwrap() + 1.0) * 0.5).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    img
}

pub const ALBEDO_PIXEL_CHANNELS: [usize; 3] = [0, 1, 2];
/// Roughness (G) and metallic (B) of an MR image.
pub const MR_PIXEL_CHANNELS: [usize; 2] = [1, 2];

/// One view's geometry at source resolution plus the window the model sees.
#[derive(Debug, Clone, Copy)]
pub struct ViewGeometry<'a> {
    pub gbuffer: &'a GBuffer,
    pub camera: &'a Camera,
    pub window: CropWindow,
}

/// Everything the denoiser is conditioned on besides the noisy state and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `[tokens, patch² · 6]` encoded normal then CCM per pixel.
    pub geometry: Tensor,
    /// `[tokens, 3]` object-space positions for the rotary embedding.
    pub coords: Tensor,
    /// `[grid², patch² · 3]` reference image tokens; `None` drops the reference.
    pub reference: Option<Tensor>,
    /// Per-view surface coverage at model resolution.
    pub masks: Vec<Mask>,
}

impl Conditioning {
    pub fn build(cfg: &DenoiserConfig, views: &[ViewGeometry], reference: Option<&Image>) -> Result<Conditioning> {
        if views.len() != cfg.views {
            return Err(Error::ShapeMismatch(format!(
                "{} views for a {}-view model",
                views.len(),
                cfg.views
            )));
        }
        let s = cfg.image_size;
        let mut geometry = Vec::with_capacity(views.len());
        let mut coords = Vec::with_capacity(views.len());
        let mut masks = Vec::with_capacity(views.len());
        for v in views {
            let w = v.window;
            if w.x0 + w.size > v.gbuffer.size() || w.y0 + w.size > v.gbuffer.size() || w.size == 0 {
                return Err(Error::ShapeMismatch(format!("crop window {w:?} outside the g-buffer")));
            }
            let crop = v.gbuffer.crop(w);
            let normal = crop.normal.resample(s);
            let ccm = crop.ccm.resample(s);
            let mut both = Image::new(s, s, GEOMETRY_CHANNELS);
            for (i, px) in both.data.chunks_mut(GEOMETRY_CHANNELS).enumerate() {
                px[..3].copy_from_slice(&normal.data[3 * i..3 * i + 3]);
                px[3..].copy_from_slice(&ccm.data[3 * i..3 * i + 3]);
            }
            geometry.push(patchify(&both, cfg.patch, &[0, 1, 2, 3, 4, 5]));
            coords.push(token_coords(v, cfg.grid()));
            masks.push(Mask::from_threshold(&crop.mask.to_image().resample(s), 0.5));
        }
        let reference = match reference {
            Some(img) => Some(reference_tokens(cfg, img)?),
            None => None,
        };
        Ok(Conditioning {
            geometry: Tensor::vstack(&geometry.iter().collect::<Vec<_>>())?,
            coords: Tensor::vstack(&coords.iter().collect::<Vec<_>>())?,
            reference,
            masks,
        })
    }

    /// Copy with the reference removed (the unconditional branch of guidance).
    pub fn without_reference(&self) -> Conditioning {
        Conditioning {
            reference: None,
            ..self.clone()
        }
    }
}

pub fn reference_tokens(cfg: &DenoiserConfig, img: &Image) -> Result<Tensor> {
    if img.channels < REFERENCE_CHANNELS || img.width != img.height {
        return Err(Error::ShapeMismatch("reference must be a square RGB image".into()));
    }
    Ok(patchify(&img.resample(cfg.image_size), cfg.patch, &[0, 1, 2]))
}

/// Mean surface position of the source pixels each token covers inside the
/// window; tokens with no surface take the point at [`FALLBACK_DEPTH`] on the
/// ray through their center.
pub fn token_coords(view: &ViewGeometry, grid: usize) -> Tensor {
    let w = view.window;
    let mut sum = vec![Vec3::ZERO; grid * grid];
    let mut count = vec![0usize; grid * grid];
    for y in 0..w.size {
        for x in 0..w.size {
            let (sx, sy) = (w.x0 + x, w.y0 + y);
            if view.gbuffer.mask.get(sx, sy) {
                let k = (y * grid / w.size) * grid + x * grid / w.size;
                sum[k] = sum[k] + view.gbuffer.position(sx, sy);
                count[k] += 1;
            }
        }
    }
    let cell = w.size as f64 / grid as f64;
    Tensor::new(
        &[grid * grid, 3],
        (0..grid * grid)
            .flat_map(|k| {
                let p = if count[k] > 0 {
                    sum[k] * (1.0 / count[k] as f64)
                } else {
                    let (tx, ty) = ((k % grid) as f64, (k / grid) as f64);
                    view.camera.unproject(
                        w.x0 as f64 + (tx + 0.5) * cell,
                        w.y0 as f64 + (ty + 0.5) * cell,
                        FALLBACK_DEPTH,
                    )
                };
                p.to_array()
            })
            .collect(),
    )
    .expect("coordinate layout")
}

/// Encodes per-view albedo and MR images (already at model resolution) as the
/// clean-sample token matrices of the two branches.
pub fn material_tokens(cfg: &DenoiserConfig, albedo: &[Image], mr: &[Image]) -> Result<Vec<Tensor>> {
    let check = |imgs: &[Image]| {
        imgs.len() == cfg.views
            && imgs
                .iter()
                .all(|i| i.width == cfg.image_size && i.height == cfg.image_size)
    };
    if !check(albedo) || !check(mr) {
        return Err(Error::ShapeMismatch(
            "material views must match the model's view count and size".into(),
        ));
    }
    let a: Vec<Tensor> = albedo
        .iter()
        .map(|i| patchify(i, cfg.patch, &ALBEDO_PIXEL_CHANNELS))
        .collect();
    let m: Vec<Tensor> = mr.iter().map(|i| patchify(i, cfg.patch, &MR_PIXEL_CHANNELS)).collect();
    Ok(vec![
        Tensor::vstack(&a.iter().collect::<Vec<_>>())?,
        Tensor::vstack(&m.iter().collect::<Vec<_>>())?,
    ])
}

/// Splits a branch's token matrix back into per-view images.
pub fn decode_branch(cfg: &DenoiserConfig, tokens: &Tensor, channels: &[usize]) -> Vec<Image> {
    let per = cfg.tokens_per_view();
    (0..cfg.views)
        .map(|v| {
            unpatchify(
                &tokens.slice_rows(v * per, (v + 1) * per),
                cfg.image_size,
                cfg.patch,
                channels,
            )
        })
        .collect()
}
