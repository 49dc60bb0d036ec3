//! Fusion of per-view material images into UV-space textures.

mod export;

pub use export::{export_gltf, ALBEDO_FILE, MR_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::material::{MaterialSet, MaterialViews};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::par;
use crate::raster;
use crate::render::{Camera, GBuffer};

/// Surface point owning each texel of the UV atlas.
#[derive(Debug, Clone)]
pub struct UvSurface {
    pub resolution: usize,
    pub position: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub covered: Mask,
}

pub fn rasterize_uv_positions(mesh: &Mesh, resolution: usize) -> Result<UvSurface> {
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    let frags = raster::rasterize(resolution, resolution, &mesh.uv_screen_triangles(resolution));
    let n = resolution * resolution;
    let mut surface = UvSurface {
        resolution,
        position: vec![Vec3::ZERO; n],
        normal: vec![Vec3::ZERO; n],
        covered: Mask::new(resolution, resolution),
    };
    for (i, f) in frags.fragments.iter().enumerate() {
        let Some(f) = f else { continue };
        let t = f.triangle as usize;
        surface.position[i] = mesh.interpolate_position(t, f.bary);
        surface.normal[i] = mesh.interpolate_normal(t, f.bary);
        surface.covered.data[i] = true;
    }
    Ok(surface)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSampling {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BakeSettings {
    pub resolution: usize,
    pub cos_power: f64,
    pub depth_epsilon: f64,
    pub sampling: ViewSampling,
}

impl BakeSettings {
    /// Defaults: cos⁴ weighting and a depth tolerance of two texels.
    pub fn new(resolution: usize) -> BakeSettings {
        BakeSettings {
            resolution,
            cos_power: 4.0,
            depth_epsilon: 2.0 / resolution as f64,
            sampling: ViewSampling::Bilinear,
        }
    }
}

/// One accepted view at one texel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub view: usize,
    /// Normalized blending weight.
    pub weight: f64,
    /// Continuous pixel coordinates of the projected texel.
    pub x: f64,
    pub y: f64,
}

/// Blending weights actually applied at a texel, recorded separately by the
/// albedo and MR accumulation passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TexelTrace {
    pub albedo: Vec<(usize, f64)>,
    pub mr: Vec<(usize, f64)>,
}

/// Sort key making accumulation order a function of camera pose, not of the
/// position in the view list.
fn camera_key(c: &Camera) -> [u64; 6] {
    let [a, b, d] = c.view_direction.to_array().map(f64::to_bits);
    let [e, f, g] = c.up.to_array().map(f64::to_bits);
    [a, b, d, e, f, g]
}

fn visible(g: &GBuffer, px: i64, py: i64, depth: f64, eps: f64) -> bool {
    let n = g.size() as i64;
    if px < 0 || py < 0 || px >= n || py >= n {
        return false;
    }
    let (px, py) = (px as usize, py as usize);
    g.mask.get(px, py) && (g.depth_at(px, py) - depth).abs() <= eps
}

fn contributions(
    p: Vec3,
    n: Vec3,
    views: &MaterialViews,
    cameras: &[Camera],
    order: &[usize],
    s: &BakeSettings,
) -> Vec<Contribution> {
    let mut out = Vec::new();
    for &v in order {
        let cam = &cameras[v];
        let cos = n.dot(cam.to_viewer()).max(0.0);
        if cos <= 0.0 {
            continue;
        }
        let (px, depth) = cam.project(p);
        let g = &views.gbuffers[v];
        if !visible(g, px.x.floor() as i64, px.y.floor() as i64, depth, s.depth_epsilon) {
            continue;
        }
        out.push(Contribution {
            view: v,
            weight: cos.powf(s.cos_power),
            x: px.x,
            y: px.y,
        });
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    for c in &mut out {
        c.weight /= total;
    }
    out
}

/// Bilinear lookup that drops taps which are off-mask or at a different depth
/// and renormalizes the remaining tap weights.
fn sample_view(img: &Image, g: &GBuffer, c: &Contribution, depth: f64, s: &BakeSettings, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if s.sampling == ViewSampling::Nearest {
        let p = img.pixel(c.x.floor() as usize, c.y.floor() as usize);
        for (o, v) in out.iter_mut().zip(p) {
            *o = *v as f64;
        }
        return;
    }
    let fx = c.x - 0.5;
    let fy = c.y - 0.5;
    let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let mut wsum = 0.0;
    for (dx, dy, w) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let (px, py) = (x0 + dx, y0 + dy);
        if w <= 0.0 || !visible(g, px, py, depth, s.depth_epsilon) {
            continue;
        }
        for (o, v) in out.iter_mut().zip(img.pixel(px as usize, py as usize)) {
            *o += w * *v as f64;
        }
        wsum += w;
    }
    if wsum > 0.0 {
        out.iter_mut().for_each(|v| *v /= wsum);
    } else {
        let p = img.pixel(c.x.floor() as usize, c.y.floor() as usize);
        for (o, v) in out.iter_mut().zip(p) {
            *o = *v as f64;
        }
    }
}

/// Weighted blend of one image channel-set across accepted views. Returns the
/// weights it applied so callers can check albedo/MR coupling.
fn blend(
    images: &[Image],
    views: &MaterialViews,
    cameras: &[Camera],
    p: Vec3,
    contribs: &[Contribution],
    s: &BakeSettings,
    out: &mut [f32],
) -> Vec<(usize, f64)> {
    let mut acc = [0.0f64; 4];
    let mut tap = [0.0f64; 4];
    let ch = out.len();
    for c in contribs {
        let depth = cameras[c.view].project(p).1;
        sample_view(&images[c.view], &views.gbuffers[c.view], c, depth, s, &mut tap[..ch]);
        for k in 0..ch {
            acc[k] += c.weight * tap[k];
        }
    }
    for k in 0..ch {
        out[k] = acc[k].clamp(0.0, 1.0) as f32;
    }
    contribs.iter().map(|c| (c.view, c.weight)).collect()
}

fn check_inputs(views: &MaterialViews, cameras: &[Camera]) -> Result<()> {
    if views.albedo.len() != cameras.len() || views.mr.len() != cameras.len() || views.gbuffers.len() != cameras.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cameras but {}/{}/{} albedo/mr/g-buffer views",
            cameras.len(),
            views.albedo.len(),
            views.mr.len(),
            views.gbuffers.len()
        )));
    }
    for (i, cam) in cameras.iter().enumerate() {
        let n = cam.image_size;
        let ok = [&views.albedo[i], &views.mr[i]]
            .iter()
            .all(|img| img.width == n && img.height == n && img.channels == 3)
            && views.gbuffers[i].size() == n;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "view {i} does not match its {n}px camera"
            )));
        }
    }
    Ok(())
}

fn bake_impl(
    mesh: &Mesh,
    views: &MaterialViews,
    cameras: &[Camera],
    s: &BakeSettings,
    trace: bool,
) -> Result<(MaterialSet, Vec<TexelTrace>)> {
    check_inputs(views, cameras)?;
    let surface = rasterize_uv_positions(mesh, s.resolution)?;
    let r = s.resolution;
    let mut order: Vec<usize> = (0..cameras.len()).collect();
    order.sort_by_key(|&v| camera_key(&cameras[v]));

    struct Texel {
        albedo: [f32; 3],
        mr: [f32; 3],
        covered: bool,
        trace: TexelTrace,
    }
    let rows: Vec<Vec<Texel>> = par::map_indices(r, |y| {
        (0..r)
            .map(|x| {
                let i = y * r + x;
                let mut t = Texel {
                    albedo: [0.0; 3],
                    mr: [0.0; 3],
                    covered: false,
                    trace: TexelTrace::default(),
                };
                if !surface.covered.data[i] {
                    return t;
                }
                let p = surface.position[i];
                let contribs = contributions(p, surface.normal[i], views, cameras, &order, s);
                if contribs.is_empty() {
                    return t;
                }
                t.covered = true;
                let wa = blend(&views.albedo, views, cameras, p, &contribs, s, &mut t.albedo);
                let wm = blend(&views.mr, views, cameras, p, &contribs, s, &mut t.mr);
                if trace {
                    t.trace = TexelTrace { albedo: wa, mr: wm };
                }
                t
            })
            .collect()
    });
    let mut set = MaterialSet {
        albedo: Image::new(r, r, 3),
        mr: Image::new(r, r, 3),
        texel_mask: Mask::new(r, r),
    };
    let mut traces = Vec::new();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, t) in row.into_iter().enumerate() {
            set.albedo.pixel_mut(x, y).copy_from_slice(&t.albedo);
            set.mr.pixel_mut(x, y).copy_from_slice(&t.mr);
            set.texel_mask.set(x, y, t.covered);
            if trace {
                traces.push(t.trace);
            }
        }
    }
    Ok((set, traces))
}

/// Projects every covered texel into each view, keeps views that see it
/// (depth within ε of the view's g-buffer, surface facing the camera) and
/// blends them with normalized cosᵏ weights. `texel_mask` marks texels with at
/// least one accepted view; all other texels are zero.
pub fn bake(mesh: &Mesh, views: &MaterialViews, cameras: &[Camera], settings: &BakeSettings) -> Result<MaterialSet> {
    Ok(bake_impl(mesh, views, cameras, settings, false)?.0)
}

/// As [`bake`], also returning the weights applied by the albedo and MR
/// passes at every texel (row-major).
pub fn bake_traced(
    mesh: &Mesh,
    views: &MaterialViews,
    cameras: &[Camera],
    settings: &BakeSettings,
) -> Result<(MaterialSet, Vec<TexelTrace>)> {
    bake_impl(mesh, views, cameras, settings, true)
}

/// Fills uncovered texels from covered 4-neighbors, one ring per iteration.
/// Covered texels are never written.
pub fn dilate_seams(texture: &Image, mask: &Mask, iterations: usize) -> Image {
    let (w, h, ch) = (texture.width, texture.height, texture.channels);
    let mut img = texture.clone();
    let mut known = mask.clone();
    for _ in 0..iterations {
        let prev = img.clone();
        let prev_known = known.clone();
        let mut newly = vec![false; w * h];
        par::for_each_row(&mut img.data, w * ch, |y, row| {
            for x in 0..w {
                if prev_known.get(x, y) {
                    continue;
                }
                let mut sum = [0.0f64; 4];
                let mut count = 0;
                let nbrs = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
                for (nx, ny) in nbrs {
                    if nx < w && ny < h && prev_known.get(nx, ny) {
                        for (s, v) in sum.iter_mut().zip(prev.pixel(nx, ny)) {
                            *s += *v as f64;
                        }
                        count += 1;
                    }
                }
                if count > 0 {
                    for c in 0..ch {
                        row[x * ch + c] = (sum[c] / count as f64) as f32;
                    }
                }
            }
        });
        for y in 0..h {
            for x in 0..w {
                if prev_known.get(x, y) {
                    continue;
                }
                let nbrs = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
                newly[y * w + x] = nbrs.iter().any(|&(nx, ny)| nx < w && ny < h && prev_known.get(nx, ny));
            }
        }
        let mut changed = false;
        for (k, n) in known.data.iter_mut().zip(newly) {
            if n {
                *k = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    img
}

/// Dilates both textures of a baked set; `texel_mask` keeps the pre-dilation
/// coverage.
pub fn dilate_material(set: &MaterialSet, iterations: usize) -> MaterialSet {
    MaterialSet {
        albedo: dilate_seams(&set.albedo, &set.texel_mask, iterations),
        mr: dilate_seams(&set.mr, &set.texel_mask, iterations),
        texel_mask: set.texel_mask.clone(),
    }
}
