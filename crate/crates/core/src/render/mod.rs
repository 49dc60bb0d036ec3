//! Orthographic camera rig, g-buffer rasterization and material rendering.

pub mod brdf;

use serde::{Deserialize, Serialize};

pub use brdf::{shade_brdf, shade_terms, Light, MaterialSample, ShadingTerms};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::material::{MaterialSet, MaterialViews};
use crate::math::{Vec2, Vec3};
use crate::mesh::Mesh;
use crate::par;
use crate::raster::{self, Fragment, FragmentBuffer, ScreenTriangle};

/// Half-width of every canonical view frustum, leaving a margin around the
/// unit cube.
pub const ORTHO_HALF_EXTENT: f64 = 0.6;
/// Distance of the image plane from the origin; depth is measured from it.
pub const EYE_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Orthographic,
}

/// `view_direction` points from the camera into the scene. Image x follows
/// `view_direction × up`, image rows run down along `-up`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub kind: Projection,
    pub view_direction: Vec3,
    pub up: Vec3,
    pub ortho_half_extent: f64,
    pub image_size: usize,
}

impl Camera {
    pub fn orthographic(view_direction: Vec3, up: Vec3, image_size: usize) -> Camera {
        Camera {
            kind: Projection::Orthographic,
            view_direction: view_direction.normalize(),
            up: up.normalize(),
            ortho_half_extent: ORTHO_HALF_EXTENT,
            image_size,
        }
    }

    pub fn right(&self) -> Vec3 {
        self.view_direction.cross(self.up)
    }

    /// Continuous pixel coordinates and depth of a world point.
    pub fn project(&self, p: Vec3) -> (Vec2, f64) {
        let h = self.ortho_half_extent;
        let s = self.image_size as f64;
        let x = (p.dot(self.right()) + h) / (2.0 * h) * s;
        let y = (h - p.dot(self.up)) / (2.0 * h) * s;
        (Vec2::new(x, y), p.dot(self.view_direction) + EYE_DISTANCE)
    }

    /// World point at continuous pixel coordinates `(x, y)` and `depth`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Vec3 {
        let h = self.ortho_half_extent;
        let s = self.image_size as f64;
        let a = x / s * 2.0 * h - h;
        let b = h - y / s * 2.0 * h;
        self.right() * a + self.up * b + self.view_direction * (depth - EYE_DISTANCE)
    }

    /// World point on the ray through pixel center `(px, py)` at `depth`.
    pub fn pixel_point(&self, px: usize, py: usize, depth: f64) -> Vec3 {
        self.unproject(px as f64 + 0.5, py as f64 + 0.5, depth)
    }

    /// Unit vector from the surface toward this camera.
    pub fn to_viewer(&self) -> Vec3 {
        -self.view_direction
    }
}

/// Canonical view rigs. Six views look along the axes from +X, -X, +Y, -Y, +Z,
/// -Z (in that order); four views orbit the Z axis at azimuths 0°, 90°, 180°,
/// 270° with zero elevation.
pub fn make_view_set(n_views: usize, image_size: usize) -> Result<Vec<Camera>> {
    match n_views {
        6 => {
            let rig = [
                (Vec3::X, Vec3::Z),
                (-Vec3::X, Vec3::Z),
                (Vec3::Y, Vec3::Z),
                (-Vec3::Y, Vec3::Z),
                (Vec3::Z, Vec3::Y),
                (-Vec3::Z, Vec3::Y),
            ];
            Ok(rig
                .iter()
                .map(|&(pos, up)| Camera::orthographic(-pos, up, image_size))
                .collect())
        }
        4 => Ok((0..4)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_2;
                let pos = Vec3::new(a.cos(), a.sin(), 0.0);
                Camera::orthographic(-pos, Vec3::Z, image_size)
            })
            .collect()),
        n => Err(Error::UnsupportedViewCount(n)),
    }
}

/// Per-view geometry buffers. Background pixels hold normal (0.5, 0.5, 0.5),
/// CCM (0, 0, 0) and infinite depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub normal: Image,
    pub ccm: Image,
    pub depth: Image,
    pub mask: Mask,
}

impl GBuffer {
    pub fn size(&self) -> usize {
        self.mask.width
    }

    pub fn decoded_normal(&self, x: usize, y: usize) -> Vec3 {
        let n = self.normal.pixel(x, y);
        Vec3::new(
            n[0] as f64 * 2.0 - 1.0,
            n[1] as f64 * 2.0 - 1.0,
            n[2] as f64 * 2.0 - 1.0,
        )
    }

    pub fn position(&self, x: usize, y: usize) -> Vec3 {
        let c = self.ccm.pixel(x, y);
        Vec3::new(c[0] as f64 - 0.5, c[1] as f64 - 0.5, c[2] as f64 - 0.5)
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth.data[y * self.depth.width + x] as f64
    }

    /// 8-bit-safe depth visualization: depth / 2, background white.
    pub fn depth_image(&self) -> Image {
        self.depth
            .map(|d| if d.is_finite() { (d / 2.0).clamp(0.0, 1.0) } else { 1.0 })
    }

    pub fn crop(&self, w: crate::image::CropWindow) -> GBuffer {
        GBuffer {
            normal: self.normal.crop(w),
            ccm: self.ccm.crop(w),
            depth: self.depth.crop(w),
            mask: self.mask.crop(w),
        }
    }
}

fn screen_triangles(mesh: &Mesh, camera: &Camera) -> Vec<Option<ScreenTriangle>> {
    (0..mesh.triangle_count())
        .map(|t| {
            if mesh.is_degenerate(t) {
                return None;
            }
            let projected = mesh.triangle_positions(t).map(|p| camera.project(p));
            Some(ScreenTriangle {
                points: projected.map(|p| p.0),
                depth: projected.map(|p| p.1),
            })
        })
        .collect()
}

/// Nearest surface fragment per pixel.
pub fn rasterize_fragments(mesh: &Mesh, camera: &Camera) -> Result<FragmentBuffer> {
    let tris = screen_triangles(mesh, camera);
    if tris.iter().all(Option::is_none) {
        return Err(Error::EmptyMesh);
    }
    Ok(raster::rasterize(camera.image_size, camera.image_size, &tris))
}

pub fn gbuffer_from_fragments(mesh: &Mesh, frags: &FragmentBuffer) -> GBuffer {
    let (w, h) = (frags.width, frags.height);
    let mut normal = Image::filled(w, h, 3, 0.5);
    let mut ccm = Image::new(w, h, 3);
    let mut depth = Image::filled(w, h, 1, f32::INFINITY);
    let mut mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some(f) = frags.get(x, y) else { continue };
            let t = f.triangle as usize;
            let n = mesh.interpolate_normal(t, f.bary);
            let p = mesh.interpolate_position(t, f.bary);
            for (c, v) in normal.pixel_mut(x, y).iter_mut().zip(n.to_array()) {
                *c = (v * 0.5 + 0.5) as f32;
            }
            for (c, v) in ccm.pixel_mut(x, y).iter_mut().zip(p.to_array()) {
                *c = (v + 0.5).clamp(0.0, 1.0) as f32;
            }
            depth.data[y * w + x] = f.depth as f32;
            mask.set(x, y, true);
        }
    }
    GBuffer {
        normal,
        ccm,
        depth,
        mask,
    }
}

pub fn rasterize_gbuffer(mesh: &Mesh, camera: &Camera) -> Result<GBuffer> {
    Ok(gbuffer_from_fragments(mesh, &rasterize_fragments(mesh, camera)?))
}

/// Screen-space albedo and MR images: the material sampled at each covered
/// pixel through the UV atlas, with no lighting. Background is zero.
pub fn sample_material_views(mesh: &Mesh, material: &MaterialSet, cameras: &[Camera]) -> Result<MaterialViews> {
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    let mut views = MaterialViews::default();
    for cam in cameras {
        let frags = rasterize_fragments(mesh, cam)?;
        let n = cam.image_size;
        let mut albedo = Image::new(n, n, 3);
        let mut mr = Image::new(n, n, 3);
        for y in 0..n {
            for x in 0..n {
                let Some(f) = frags.get(x, y) else { continue };
                let uv = mesh.interpolate_uv(f.triangle as usize, f.bary);
                material.albedo.sample_uv(uv.x, uv.y, albedo.pixel_mut(x, y));
                material.mr.sample_uv(uv.x, uv.y, mr.pixel_mut(x, y));
            }
        }
        views.albedo.push(albedo);
        views.mr.push(mr);
        views.gbuffers.push(gbuffer_from_fragments(mesh, &frags));
    }
    Ok(views)
}

/// Shades the UV-sampled material under `light`; background is black.
pub fn render_views(mesh: &Mesh, material: &MaterialSet, cameras: &[Camera], light: &Light) -> Result<Vec<Image>> {
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    cameras
        .iter()
        .map(|cam| {
            let frags = rasterize_fragments(mesh, cam)?;
            Ok(shade_pixels(mesh, &frags, cam, light, |_, _, f, albedo, mr| {
                let uv = mesh.interpolate_uv(f.triangle as usize, f.bary);
                material.albedo.sample_uv(uv.x, uv.y, albedo);
                material.mr.sample_uv(uv.x, uv.y, mr);
            }))
        })
        .collect()
}

/// Shades screen-space material images (e.g. generated views) over the
/// camera's fragments.
pub fn shade_material_images(mesh: &Mesh, camera: &Camera, albedo: &Image, mr: &Image, light: &Light) -> Result<Image> {
    let frags = rasterize_fragments(mesh, camera)?;
    Ok(shade_pixels(mesh, &frags, camera, light, |x, y, _, a, m| {
        a.copy_from_slice(albedo.pixel(x, y));
        m.copy_from_slice(mr.pixel(x, y));
    }))
}

fn shade_pixels(
    mesh: &Mesh,
    frags: &FragmentBuffer,
    cam: &Camera,
    light: &Light,
    lookup: impl Fn(usize, usize, &Fragment, &mut [f32], &mut [f32]) + Sync,
) -> Image {
    let n = frags.width;
    let mut out = Image::new(n, frags.height, 3);
    let view = cam.to_viewer();
    par::for_each_row(&mut out.data, n * 3, |y, row| {
        let (mut a, mut m) = ([0f32; 3], [0f32; 3]);
        for x in 0..n {
            let Some(f) = frags.get(x, y) else { continue };
            lookup(x, y, f, &mut a, &mut m);
            let sample = MaterialSample {
                albedo: a.map(|v| v as f64),
                roughness: m[1] as f64,
                metallic: m[2] as f64,
            };
            let normal = mesh.interpolate_normal(f.triangle as usize, f.bary);
            let rgb = shade_brdf(&sample, normal, view, light);
            for c in 0..3 {
                row[x * 3 + c] = rgb[c] as f32;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use crate::mesh::primitives;
    use proptest::prelude::*;

    #[test]
    fn six_view_rig_is_axis_aligned() {
        let cams = make_view_set(6, 512).unwrap();
        assert_eq!(cams.len(), 6);
        for c in &cams {
            assert_eq!(c.image_size, 512);
            assert_eq!(c.ortho_half_extent, 0.6);
            assert!(c.view_direction.dot(c.up).abs() < 1e-6);
            assert_eq!(c.view_direction.to_array().iter().filter(|v| v.abs() == 1.0).count(), 1);
        }
    }

    #[test]
    fn four_view_rig_orbits() {
        let cams = make_view_set(4, 256).unwrap();
        for (i, c) in cams.iter().enumerate() {
            let a = i as f64 * std::f64::consts::FRAC_PI_2;
            assert!((c.view_direction - Vec3::new(-a.cos(), -a.sin(), 0.0)).length() < 1e-12);
            assert_eq!(c.view_direction.z, 0.0);
        }
        assert_eq!(make_view_set(5, 256), Err(Error::UnsupportedViewCount(5)));
    }

    #[test]
    fn project_unproject_roundtrip() {
        let cam = make_view_set(6, 64).unwrap()[2];
        let p = Vec3::new(0.1, -0.2, 0.3);
        let (s, d) = cam.project(p);
        assert!((cam.unproject(s.x, s.y, d) - p).length() < 1e-12);
    }

    #[test]
    fn cube_front_center_and_corner() {
        // At 256 px the pixel nearest the center is 0.0023 units off-axis.
        let cam = make_view_set(6, 256).unwrap()[4];
        let g = rasterize_gbuffer(&primitives::cube(), &cam).unwrap();
        let n = g.normal.pixel(128, 128);
        let c = g.ccm.pixel(128, 128);
        for (got, want) in n.iter().chain(c).zip([0.5, 0.5, 1.0, 0.5, 0.5, 1.0]) {
            assert!((got - want).abs() <= 1.0 / 255.0, "{got} vs {want}");
        }
        assert!(!g.mask.get(0, 0));
        assert_eq!(g.ccm.pixel(0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(g.normal.pixel(0, 0), &[0.5, 0.5, 0.5]);
        assert!(g.depth_at(0, 0).is_infinite());
    }

    #[test]
    fn sphere_normals_are_radial() {
        let sphere = primitives::icosphere(8);
        for cam in make_view_set(6, 64).unwrap() {
            let g = rasterize_gbuffer(&sphere, &cam).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    if !g.mask.get(x, y) {
                        continue;
                    }
                    let n = g.decoded_normal(x, y).normalize();
                    let r = g.position(x, y).normalize();
                    assert!(n.dot(r).min(1.0).acos().to_degrees() < 3.0);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_maps_views() {
        let rot = Mat3([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let cams = make_view_set(6, 48).unwrap();
        for mesh in [primitives::cube(), primitives::icosphere(4)] {
            let a = rasterize_gbuffer(&mesh.rotated(&rot), &cams[0]).unwrap();
            let b = rasterize_gbuffer(&mesh, &cams[2]).unwrap();
            assert_eq!(a.mask, b.mask);
            for y in 0..48 {
                for x in 0..48 {
                    if !b.mask.get(x, y) {
                        continue;
                    }
                    let ra = rot.apply(b.decoded_normal(x, y));
                    assert!((a.decoded_normal(x, y) - ra).length() < 2.0 / 255.0);
                    assert!((a.depth_at(x, y) - b.depth_at(x, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn ambient_white_fills_silhouette() {
        let cube = primitives::cube();
        let mat = MaterialSet::constant(16, [1.0; 3], 0.5, 0.0);
        let cams = make_view_set(6, 32).unwrap();
        let imgs = render_views(&cube, &mat, &cams, &Light::ambient_only(1.0)).unwrap();
        let g = rasterize_gbuffer(&cube, &cams[0]).unwrap();
        for (i, &m) in g.mask.data.iter().enumerate() {
            let want = if m { 1.0 } else { 0.0 };
            assert!(imgs[0].data[3 * i..3 * i + 3].iter().all(|&v| v == want));
        }
    }

    #[test]
    fn missing_uvs_is_an_error() {
        let mesh = primitives::cube().without_uvs();
        let mat = MaterialSet::constant(4, [1.0; 3], 0.5, 0.0);
        let cams = make_view_set(6, 8).unwrap();
        assert_eq!(
            render_views(&mesh, &mat, &cams, &Light::ambient_only(1.0)).unwrap_err(),
            Error::MissingUvs
        );
    }

    proptest! {
        #[test]
        fn written_fragment_is_nearest(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tris: Vec<Option<ScreenTriangle>> = (0..6).map(|_| Some(ScreenTriangle {
                points: [0; 3].map(|_| Vec2::new(rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0))),
                depth: [0; 3].map(|_| rng.gen_range(0.5..1.5)),
            })).collect();
            let buf = raster::rasterize(16, 16, &tris);
            for y in 0..16 {
                for x in 0..16 {
                    let Some(f) = buf.get(x, y) else { continue };
                    // Every other triangle covering this pixel is not closer.
                    for (t, tri) in tris.iter().enumerate() {
                        let one = raster::rasterize(16, 16, &[*tri]);
                        if let Some(g) = one.get(x, y) {
                            prop_assert!(f.depth <= g.depth);
                            if t as u32 != f.triangle && g.depth == f.depth {
                                prop_assert!(f.triangle < t as u32);
                            }
                        }
                    }
                }
            }
        }
    }
}
