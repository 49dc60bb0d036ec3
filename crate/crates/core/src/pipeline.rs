//! Mesh-to-material generation: render the view rig, condition the denoiser,
//! sample all views jointly and bake them into UV textures.

use crate::bake::{bake, dilate_material, BakeSettings};
use crate::denoiser::{sample, Conditioning, Denoiser, DenoiserConfig, SampleSettings, SampledViews, ViewGeometry};
use crate::error::Result;
use crate::image::{CropWindow, Image};
use crate::material::{MaterialSet, MaterialViews};
use crate::mesh::Mesh;
use crate::render::{make_view_set, rasterize_gbuffer, Camera, GBuffer};

/// Conditioning g-buffers are rendered at this multiple of the model
/// resolution and downsampled, matching how training data is prepared.
pub const SOURCE_SCALE: usize = 2;

/// Seam dilation rings applied after baking.
pub const DILATION_RINGS: usize = 4;

pub struct ViewRig {
    pub cameras: Vec<Camera>,
    pub gbuffers: Vec<GBuffer>,
}

pub fn render_rig(mesh: &Mesh, views: usize, size: usize) -> Result<ViewRig> {
    let cameras = make_view_set(views, size)?;
    let gbuffers = cameras
        .iter()
        .map(|c| rasterize_gbuffer(mesh, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewRig { cameras, gbuffers })
}

/// Builds whole-view conditioning from a source-resolution rig.
pub fn condition_rig(cfg: &DenoiserConfig, rig: &ViewRig, reference: Option<&Image>) -> Result<Conditioning> {
    let geo: Vec<ViewGeometry> = rig
        .gbuffers
        .iter()
        .zip(&rig.cameras)
        .map(|(g, c)| ViewGeometry {
            gbuffer: g,
            camera: c,
            window: CropWindow::full(g.size()),
        })
        .collect();
    Conditioning::build(cfg, &geo, reference)
}

pub struct Generated {
    pub sampled: SampledViews,
    /// Rig at model resolution, aligned with the sampled images.
    pub rig: ViewRig,
}

impl Generated {
    pub fn material_views(&self) -> Result<MaterialViews> {
        self.sampled.clone().into_material_views(self.rig.gbuffers.clone())
    }
}

pub fn generate(
    model: &Denoiser,
    mesh: &Mesh,
    reference: Option<&Image>,
    settings: &SampleSettings,
) -> Result<Generated> {
    let cfg = &model.config;
    let source = render_rig(mesh, cfg.views, cfg.image_size * SOURCE_SCALE)?;
    let cond = condition_rig(cfg, &source, reference)?;
    let sampled = sample(model, &cond, settings)?;
    Ok(Generated {
        sampled,
        rig: render_rig(mesh, cfg.views, cfg.image_size)?,
    })
}

/// Bakes generated views into dilated UV textures.
pub fn bake_generated(mesh: &Mesh, generated: &Generated, resolution: usize) -> Result<MaterialSet> {
    let views = generated.material_views()?;
    let set = bake(mesh, &views, &generated.rig.cameras, &BakeSettings::new(resolution))?;
    Ok(dilate_material(&set, DILATION_RINGS))
}
