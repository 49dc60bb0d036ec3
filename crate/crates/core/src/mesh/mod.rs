//! Indexed triangle meshes with a per-corner UV atlas.

pub mod gltf;
pub mod obj;
pub mod primitives;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec2, Vec3};
use crate::raster::{self, ScreenTriangle};

/// Triangles with twice-area at or below this (relative to the squared bounding
/// box extent) are degenerate: kept in the index list, skipped by rasterization
/// and normal weighting.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    vertex_normals: Vec<Vec3>,
    /// Three entries per triangle, or empty when the mesh has no atlas.
    uvs: Vec<Vec2>,
    chart_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasReport {
    pub coverage_fraction: f64,
    pub overlap_texel_count: usize,
    pub chart_count: usize,
}

impl Mesh {
    /// Builds a mesh, checking indices and UV range. Missing normals are
    /// computed; provided normals are renormalized. Empty `uvs` means no atlas;
    /// empty `chart_ids` are derived from UV connectivity.
    pub fn new(
        positions: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        vertex_normals: Option<Vec<Vec3>>,
        uvs: Vec<Vec2>,
        chart_ids: Option<Vec<u32>>,
    ) -> Result<Mesh> {
        if positions.is_empty() || triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = positions.len();
        if let Some(bad) = triangles.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(Error::Parse(format!("triangle references vertex {} of {n}", bad + 1)));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Parse("non-finite vertex position".into()));
        }
        if !uvs.is_empty() && uvs.len() != triangles.len() * 3 {
            return Err(Error::Parse(format!(
                "expected {} corner UVs, got {}",
                triangles.len() * 3,
                uvs.len()
            )));
        }
        const UV_SLACK: f64 = 1e-6;
        let mut uvs = uvs;
        for uv in &mut uvs {
            let inside = |v: f64| (-UV_SLACK..=1.0 + UV_SLACK).contains(&v);
            if !inside(uv.x) || !inside(uv.y) {
                return Err(Error::Parse(format!("uv ({}, {}) outside [0,1]²", uv.x, uv.y)));
            }
            uv.x = uv.x.clamp(0.0, 1.0);
            uv.y = uv.y.clamp(0.0, 1.0);
        }
        let chart_ids = match chart_ids {
            Some(c) if c.len() == triangles.len() => c,
            Some(c) => {
                return Err(Error::Parse(format!(
                    "expected {} chart ids, got {}",
                    triangles.len(),
                    c.len()
                )))
            }
            None => derive_charts(&triangles, &uvs),
        };
        let mut mesh = Mesh {
            positions,
            triangles,
            vertex_normals: Vec::new(),
            uvs,
            chart_ids,
        };
        match vertex_normals {
            Some(normals) if normals.len() == n => {
                mesh.vertex_normals = normals
                    .into_iter()
                    .map(|v| {
                        let u = v.normalize();
                        if u.length() > 0.5 {
                            u
                        } else {
                            Vec3::Z
                        }
                    })
                    .collect();
            }
            Some(normals) => return Err(Error::Parse(format!("expected {n} normals, got {}", normals.len()))),
            None => mesh = compute_vertex_normals(&mesh),
        }
        Ok(mesh)
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn uvs(&self) -> &[Vec2] {
        &self.uvs
    }

    pub fn chart_ids(&self) -> &[u32] {
        &self.chart_ids
    }

    pub fn has_uvs(&self) -> bool {
        !self.uvs.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corner_uvs(&self, t: usize) -> [Vec2; 3] {
        [self.uvs[3 * t], self.uvs[3 * t + 1], self.uvs[3 * t + 2]]
    }

    pub fn triangle_positions(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    /// Unnormalized face normal, with length twice the triangle area.
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_positions(t);
        (b - a).cross(c - a)
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        self.face_cross(t).normalize()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &p in &self.positions {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }

    pub fn is_degenerate(&self, t: usize) -> bool {
        let (lo, hi) = self.bounds();
        let extent = (hi - lo).max_elem().max(f64::MIN_POSITIVE);
        self.face_cross(t).length() <= DEGENERATE_AREA * extent * extent
    }

    /// Interpolated (renormalized) shading normal at barycentric `b`.
    pub fn interpolate_normal(&self, t: usize, b: [f64; 3]) -> Vec3 {
        let [i, j, k] = self.triangles[t];
        (self.vertex_normals[i as usize] * b[0]
            + self.vertex_normals[j as usize] * b[1]
            + self.vertex_normals[k as usize] * b[2])
            .normalize()
    }

    pub fn interpolate_position(&self, t: usize, b: [f64; 3]) -> Vec3 {
        let [p, q, r] = self.triangle_positions(t);
        p * b[0] + q * b[1] + r * b[2]
    }

    pub fn interpolate_uv(&self, t: usize, b: [f64; 3]) -> Vec2 {
        let [p, q, r] = self.corner_uvs(t);
        p * b[0] + q * b[1] + r * b[2]
    }

    /// Applies a linear map to positions and its rotation part to normals.
    pub fn rotated(&self, rotation: &Mat3) -> Mesh {
        Mesh {
            positions: self.positions.iter().map(|&p| rotation.apply(p)).collect(),
            vertex_normals: self.vertex_normals.iter().map(|&n| rotation.apply(n)).collect(),
            ..self.clone()
        }
    }

    /// Same geometry with the triangle list permuted by `order`.
    pub fn reordered(&self, order: &[usize]) -> Mesh {
        let mut out = self.clone();
        out.triangles = order.iter().map(|&t| self.triangles[t]).collect();
        out.chart_ids = order.iter().map(|&t| self.chart_ids[t]).collect();
        if self.has_uvs() {
            out.uvs = order.iter().flat_map(|&t| self.corner_uvs(t)).collect();
        }
        out
    }

    pub fn without_uvs(&self) -> Mesh {
        Mesh {
            uvs: Vec::new(),
            ..self.clone()
        }
    }

    /// UV-space triangles in texel coordinates (row 0 at v = 1). Degenerate
    /// triangles map to `None`.
    pub fn uv_screen_triangles(&self, resolution: usize) -> Vec<Option<ScreenTriangle>> {
        let r = resolution as f64;
        (0..self.triangle_count())
            .map(|t| {
                if self.is_degenerate(t) {
                    return None;
                }
                let uv = self.corner_uvs(t);
                Some(ScreenTriangle {
                    points: uv.map(|p| Vec2::new(p.x * r, (1.0 - p.y) * r)),
                    depth: [0.0; 3],
                })
            })
            .collect()
    }
}

/// Loads an OBJ or glTF (`.gltf` / `.glb`) file. UVs are mandatory.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let mesh = match ext.as_deref() {
        Some("obj") => obj::read_obj(path)?,
        Some("gltf") | Some("glb") => gltf::read_gltf(path)?,
        _ => return Err(Error::Parse(format!("{}: unsupported mesh format", path.display()))),
    };
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    Ok(mesh)
}

/// Centers the bounding box at the origin and scales uniformly so the longest
/// side is exactly 1.
pub fn normalize_to_unit_cube(mesh: &Mesh) -> Result<Mesh> {
    if mesh.positions.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (lo, hi) = mesh.bounds();
    let extent = (hi - lo).max_elem();
    if extent <= 0.0 || !extent.is_finite() {
        return Err(Error::EmptyMesh);
    }
    let center = (lo + hi) * 0.5;
    let scale = 1.0 / extent;
    Ok(Mesh {
        positions: mesh.positions.iter().map(|&p| (p - center) * scale).collect(),
        ..mesh.clone()
    })
}

/// Area-weighted average of incident face normals, normalized. Degenerate
/// triangles contribute nothing; isolated vertices fall back to +Z.
pub fn compute_vertex_normals(mesh: &Mesh) -> Mesh {
    let mut acc = vec![Vec3::ZERO; mesh.positions.len()];
    for t in 0..mesh.triangle_count() {
        if mesh.is_degenerate(t) {
            continue;
        }
        // |cross| is twice the area, so summing it weights by area.
        let c = mesh.face_cross(t);
        for &i in &mesh.triangles[t] {
            acc[i as usize] += c;
        }
    }
    let normals = acc
        .into_iter()
        .map(|v| if v.length() > 0.0 { v.normalize() } else { Vec3::Z })
        .collect();
    Mesh {
        vertex_normals: normals,
        ..mesh.clone()
    }
}

/// Rasterizes every non-degenerate triangle into UV space and reports texel
/// coverage and overlap.
pub fn validate_uv_atlas(mesh: &Mesh, resolution: usize) -> Result<AtlasReport> {
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    let counts = raster::coverage_counts(resolution, resolution, &mesh.uv_screen_triangles(resolution));
    let covered = counts.iter().filter(|&&c| c >= 1).count();
    let overlap = counts.iter().filter(|&&c| c >= 2).count();
    let charts: BTreeSet<u32> = mesh.chart_ids.iter().copied().collect();
    Ok(AtlasReport {
        coverage_fraction: covered as f64 / (resolution * resolution) as f64,
        overlap_texel_count: overlap,
        chart_count: charts.len(),
    })
}

/// Labels triangles by UV-connected component: two triangles share a chart
/// when they share an edge whose endpoints carry identical UVs on both sides.
fn derive_charts(triangles: &[[u32; 3]], uvs: &[Vec2]) -> Vec<u32> {
    let n = triangles.len();
    if uvs.is_empty() {
        return vec![0; n];
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    type Corner = (u32, u64, u64);
    let mut edges: HashMap<(Corner, Corner), usize> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let a = (tri[e], uvs[3 * t + e].x.to_bits(), uvs[3 * t + e].y.to_bits());
            let b = (
                tri[(e + 1) % 3],
                uvs[3 * t + (e + 1) % 3].x.to_bits(),
                uvs[3 * t + (e + 1) % 3].y.to_bits(),
            );
            let key = if a <= b { (a, b) } else { (b, a) };
            match edges.get(&key) {
                Some(&other) => {
                    let (ra, rb) = (find(&mut parent, t), find(&mut parent, other));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    edges.insert(key, t);
                }
            }
        }
    }
    let mut labels = HashMap::new();
    (0..n)
        .map(|t| {
            let root = find(&mut parent, t);
            let next = labels.len() as u32;
            *labels.entry(root).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use proptest::prelude::*;

    #[test]
    fn normalize_box_preserves_aspect() {
        let quad = primitives::cube();
        let stretched = Mesh {
            positions: quad
                .positions()
                .iter()
                .map(|p| Vec3::new((p.x + 0.5) * 2.0, p.y + 0.5, p.z + 0.5))
                .collect(),
            ..quad.clone()
        };
        let n = normalize_to_unit_cube(&stretched).unwrap();
        let (lo, hi) = n.bounds();
        assert!((lo - Vec3::new(-0.5, -0.25, -0.25)).length() < 1e-12);
        assert!((hi - Vec3::new(0.5, 0.25, 0.25)).length() < 1e-12);
    }

    #[test]
    fn cube_spanning_zero_two_maps_to_centered_unit_cube() {
        let cube = primitives::cube();
        let big = Mesh {
            positions: cube.positions().iter().map(|&p| (p + Vec3::splat(0.5)) * 2.0).collect(),
            ..cube.clone()
        };
        let n = normalize_to_unit_cube(&big).unwrap();
        for (a, b) in n.positions().iter().zip(cube.positions()) {
            assert!((*a - *b).length() < 1e-12);
        }
    }

    #[test]
    fn flat_quad_normals_point_up() {
        let quad = compute_vertex_normals(&primitives::quad());
        for n in quad.vertex_normals() {
            assert!((*n - Vec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn single_triangle_normals_equal_face_normal() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.2),
                Vec3::new(0.0, 1.0, 0.5),
            ],
            vec![[0, 1, 2]],
            None,
            vec![],
            None,
        )
        .unwrap();
        let f = m.face_normal(0);
        for n in m.vertex_normals() {
            assert!((*n - f).length() < 1e-12);
        }
    }

    #[test]
    fn icosphere_normals_are_radial() {
        let sphere = compute_vertex_normals(&primitives::icosphere(8));
        let worst = sphere
            .positions()
            .iter()
            .zip(sphere.vertex_normals())
            .map(|(p, n)| p.normalize().dot(*n).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(0.0, f64::max);
        assert!(worst < 5.0, "worst deviation {worst}°");
    }

    #[test]
    fn degenerate_triangle_is_kept_and_ignored() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
            None,
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(m.triangle_count(), 2);
        assert!(m.is_degenerate(1));
        assert!((m.vertex_normals()[3] - Vec3::Z).length() < 1e-12);
        assert!((m.vertex_normals()[0] - Vec3::Z).length() < 1e-12);
    }

    #[test]
    fn out_of_range_index_is_parse_error() {
        let err = Mesh::new(vec![Vec3::ZERO; 3], vec![[0, 1, 3]], None, vec![], None).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn cube_atlas_has_six_disjoint_charts() {
        let r = validate_uv_atlas(&primitives::cube(), 256).unwrap();
        assert_eq!(r.overlap_texel_count, 0);
        assert_eq!(r.chart_count, 6);
        assert!(r.coverage_fraction > 0.4 && r.coverage_fraction < 0.8);
    }

    #[test]
    fn colliding_uvs_overlap() {
        let quad = primitives::quad();
        // Map both triangles onto the first triangle's UVs.
        let first = quad.corner_uvs(0);
        let mut uvs = first.to_vec();
        uvs.extend_from_slice(&first);
        let m = Mesh::new(quad.positions().to_vec(), quad.triangles().to_vec(), None, uvs, None).unwrap();
        assert!(validate_uv_atlas(&m, 64).unwrap().overlap_texel_count > 0);
    }

    #[test]
    fn full_quad_chart_covers_everything() {
        let r = validate_uv_atlas(&primitives::quad(), 256).unwrap();
        assert!(r.coverage_fraction >= 0.98);
        assert_eq!(r.overlap_texel_count, 0);
        assert_eq!(r.chart_count, 1);
    }

    #[test]
    fn atlas_without_uvs_errors() {
        let m = primitives::cube().without_uvs();
        assert_eq!(validate_uv_atlas(&m, 16), Err(Error::MissingUvs));
    }

    fn arb_rotation() -> impl Strategy<Value = Mat3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.2f64..3.2).prop_filter_map("axis", |(x, y, z, a)| {
            let axis = Vec3::new(x, y, z);
            (axis.length() > 0.1).then(|| Mat3::rotation(axis, a))
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(sx in 0.1f64..5.0, sy in 0.1f64..5.0, sz in 0.1f64..5.0, off in -3.0f64..3.0) {
            let base = primitives::torus(12, 8);
            let m = Mesh {
                positions: base.positions().iter().map(|p| Vec3::new(p.x * sx + off, p.y * sy - off, p.z * sz)).collect(),
                ..base
            };
            let once = normalize_to_unit_cube(&m).unwrap();
            let twice = normalize_to_unit_cube(&once).unwrap();
            for (a, b) in once.positions().iter().zip(twice.positions()) {
                prop_assert!((*a - *b).length() < 1e-7);
            }
        }

        #[test]
        fn face_normals_rotate_with_mesh(r in arb_rotation()) {
            let m = primitives::icosphere(2);
            let rotated = m.rotated(&r);
            for t in 0..m.triangle_count() {
                let expect = r.apply(m.face_normal(t));
                prop_assert!((rotated.face_normal(t) - expect).length() < 1e-6);
            }
        }

        #[test]
        fn overlap_count_ignores_triangle_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let quad = primitives::quad();
            let mut uvs = quad.corner_uvs(0).to_vec();
            uvs.extend_from_slice(&quad.corner_uvs(0));
            let mut tris = quad.triangles().to_vec();
            let mut pos = quad.positions().to_vec();
            // Append a cube atlas so the list has more than two entries.
            let cube = primitives::cube();
            let base = pos.len() as u32;
            pos.extend_from_slice(cube.positions());
            tris.extend(cube.triangles().iter().map(|t| t.map(|i| i + base)));
            uvs.extend_from_slice(cube.uvs());
            let m = Mesh::new(pos, tris, None, uvs, None).unwrap();
            let mut order: Vec<usize> = (0..m.triangle_count()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = validate_uv_atlas(&m, 64).unwrap();
            let b = validate_uv_atlas(&m.reordered(&order), 64).unwrap();
            prop_assert_eq!(a.overlap_texel_count, b.overlap_texel_count);
            prop_assert!(a.overlap_texel_count > 0);
        }
    }
}
