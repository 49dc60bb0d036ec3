//! Analytic test shapes, already normalized and UV-unwrapped.

use std::f64::consts::{PI, TAU};

use super::Mesh;
use crate::math::{Vec2, Vec3};

#[derive(Default)]
struct Builder {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    uvs: Vec<Vec2>,
    vertex_uv: Vec<Vec2>,
    charts: Vec<u32>,
}

impl Builder {
    fn vertex(&mut self, p: Vec3, n: Vec3, uv: Vec2) -> u32 {
        self.positions.push(p);
        self.normals.push(n);
        self.vertex_uv.push(uv);
        (self.positions.len() - 1) as u32
    }

    /// Adds a triangle, flipping it if its face normal disagrees with the
    /// vertex normals.
    fn triangle(&mut self, a: u32, b: u32, c: u32, chart: u32) {
        let [pa, pb, pc] = [a, b, c].map(|i| self.positions[i as usize]);
        let n = self.normals[a as usize] + self.normals[b as usize] + self.normals[c as usize];
        let tri = if (pb - pa).cross(pc - pa).dot(n) < 0.0 {
            [a, c, b]
        } else {
            [a, b, c]
        };
        self.uvs.extend(tri.map(|i| self.vertex_uv[i as usize]));
        self.triangles.push(tri);
        self.charts.push(chart);
    }

    fn build(self) -> Mesh {
        Mesh::new(
            self.positions,
            self.triangles,
            Some(self.normals),
            self.uvs,
            Some(self.charts),
        )
        .expect("primitive construction is valid")
    }
}

/// Lower-left corner of cell `i` in a `cols`-wide grid with square cells of
/// side `side`, centered within each `1/cols × 1/rows` slot.
fn atlas_cell(i: usize, cols: usize, rows: usize, side: f64) -> Vec2 {
    let (w, h) = (1.0 / cols as f64, 1.0 / rows as f64);
    let (c, r) = ((i % cols) as f64, (i / cols) as f64);
    Vec2::new(c * w + (w - side) / 2.0, r * h + (h - side) / 2.0)
}

/// Axis-aligned cube `[-0.5, 0.5]³`: 24 vertices, 12 triangles, one UV chart
/// per face.
pub fn cube() -> Mesh {
    const SIDE: f64 = 0.3;
    // (normal, s, t) with s × t = normal.
    let faces = [
        (Vec3::X, Vec3::Y, Vec3::Z),
        (-Vec3::X, Vec3::Z, Vec3::Y),
        (Vec3::Y, Vec3::Z, Vec3::X),
        (-Vec3::Y, Vec3::X, Vec3::Z),
        (Vec3::Z, Vec3::X, Vec3::Y),
        (-Vec3::Z, Vec3::Y, Vec3::X),
    ];
    let mut b = Builder::default();
    for (f, &(n, s, t)) in faces.iter().enumerate() {
        let origin = atlas_cell(f, 3, 2, SIDE);
        let corner = |u: f64, v: f64| (n * 0.5 + s * (u - 0.5) + t * (v - 0.5), origin + Vec2::new(u, v) * SIDE);
        let ids: Vec<u32> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .map(|&(u, v)| {
                let (p, uv) = corner(u, v);
                b.vertex(p, n, uv)
            })
            .collect();
        b.triangle(ids[0], ids[1], ids[2], f as u32);
        b.triangle(ids[0], ids[2], ids[3], f as u32);
    }
    b.build()
}

/// Unit quad in the z = 0 plane facing +Z with UV = (x + 0.5, y + 0.5).
pub fn quad() -> Mesh {
    let mut b = Builder::default();
    let ids: Vec<u32> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        .iter()
        .map(|&(u, v)| b.vertex(Vec3::new(u - 0.5, v - 0.5, 0.0), Vec3::Z, Vec2::new(u, v)))
        .collect();
    b.triangle(ids[0], ids[1], ids[2], 0);
    b.triangle(ids[0], ids[2], ids[3], 0);
    b.build()
}

fn icosahedron_rings() -> (Vec3, Vec3, [Vec3; 5], [Vec3; 5]) {
    let lat = 0.5f64.atan();
    let ring = |offset: f64, z: f64| {
        std::array::from_fn(|i| {
            let a = offset + i as f64 * TAU / 5.0;
            Vec3::new(lat.cos() * a.cos(), lat.cos() * a.sin(), z)
        })
    };
    (Vec3::Z, -Vec3::Z, ring(0.0, lat.sin()), ring(TAU / 10.0, -lat.sin()))
}

/// Sphere of radius 0.5 built from the ten rhombi of an icosahedron, each
/// subdivided into a `k × k` grid and projected onto the sphere. Every rhombus
/// is its own UV chart; normals are exactly radial.
pub fn icosphere(k: usize) -> Mesh {
    const SIDE: f64 = 0.23;
    let k = k.max(1);
    let (north, south, upper, lower) = icosahedron_rings();
    let mut b = Builder::default();
    for d in 0..10 {
        let i = d % 5;
        let j = (i + 1) % 5;
        // Corners c00, c10, c01, c11; c00-c10-c01 and c10-c11-c01 are faces.
        let [c00, c10, c01, c11] = if d < 5 {
            [north, upper[i], upper[j], lower[i]]
        } else {
            [upper[j], lower[i], lower[j], south]
        };
        let origin = atlas_cell(d, 4, 3, SIDE);
        let mut ids = vec![0u32; (k + 1) * (k + 1)];
        for gy in 0..=k {
            for gx in 0..=k {
                let (a, c) = (gx as f64 / k as f64, gy as f64 / k as f64);
                let flat = if a + c <= 1.0 {
                    c00 + (c10 - c00) * a + (c01 - c00) * c
                } else {
                    c11 + (c01 - c11) * (1.0 - a) + (c10 - c11) * (1.0 - c)
                };
                let n = flat.normalize();
                ids[gy * (k + 1) + gx] = b.vertex(n * 0.5, n, origin + Vec2::new(a, c) * SIDE);
            }
        }
        for gy in 0..k {
            for gx in 0..k {
                let v = |x: usize, y: usize| ids[y * (k + 1) + x];
                b.triangle(v(gx, gy), v(gx + 1, gy), v(gx, gy + 1), d as u32);
                b.triangle(v(gx + 1, gy), v(gx + 1, gy + 1), v(gx, gy + 1), d as u32);
            }
        }
    }
    b.build()
}

/// Capped cylinder of radius 0.5 and height 1 along Z. Three charts: the side
/// strip and two disk caps.
pub fn cylinder(segments: usize) -> Mesh {
    let segments = segments.max(3);
    let mut b = Builder::default();
    let (strip_lo, strip_hi) = (Vec2::new(0.02, 0.52), Vec2::new(0.98, 0.98));
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for s in 0..=segments {
        let a = s as f64 / segments as f64;
        let (x, y) = ((a * TAU).cos() * 0.5, (a * TAU).sin() * 0.5);
        let n = Vec3::new(x, y, 0.0).normalize();
        let u = strip_lo.x + (strip_hi.x - strip_lo.x) * a;
        bottom.push(b.vertex(Vec3::new(x, y, -0.5), n, Vec2::new(u, strip_lo.y)));
        top.push(b.vertex(Vec3::new(x, y, 0.5), n, Vec2::new(u, strip_hi.y)));
    }
    for s in 0..segments {
        b.triangle(bottom[s], bottom[s + 1], top[s + 1], 0);
        b.triangle(bottom[s], top[s + 1], top[s], 0);
    }
    for (chart, z, center) in [(1u32, 0.5, Vec2::new(0.25, 0.25)), (2, -0.5, Vec2::new(0.75, 0.25))] {
        let n = Vec3::new(0.0, 0.0, z * 2.0);
        let hub = b.vertex(Vec3::new(0.0, 0.0, z), n, center);
        let rim: Vec<u32> = (0..segments)
            .map(|s| {
                let a = s as f64 / segments as f64 * TAU;
                let uv = center + Vec2::new(a.cos(), a.sin()) * 0.23;
                b.vertex(Vec3::new(a.cos() * 0.5, a.sin() * 0.5, z), n, uv)
            })
            .collect();
        for s in 0..segments {
            b.triangle(hub, rim[s], rim[(s + 1) % segments], chart);
        }
    }
    b.build()
}

/// Torus in the XY plane with major radius 0.35 and tube radius 0.15, one chart
/// spanning the whole UV square.
pub fn torus(major: usize, minor: usize) -> Mesh {
    let (major, minor) = (major.max(3), minor.max(3));
    let (big, small) = (0.35, 0.15);
    let mut b = Builder::default();
    let mut ids = vec![0u32; (major + 1) * (minor + 1)];
    for i in 0..=major {
        let u = i as f64 / major as f64;
        let phi = u * TAU;
        for j in 0..=minor {
            let v = j as f64 / minor as f64;
            let theta = v * TAU - PI;
            let n = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin());
            let center = Vec3::new(phi.cos() * big, phi.sin() * big, 0.0);
            ids[i * (minor + 1) + j] = b.vertex(center + n * small, n, Vec2::new(u, v));
        }
    }
    for i in 0..major {
        for j in 0..minor {
            let v = |a: usize, c: usize| ids[a * (minor + 1) + c];
            b.triangle(v(i, j), v(i + 1, j), v(i + 1, j + 1), 0);
            b.triangle(v(i, j), v(i + 1, j + 1), v(i, j + 1), 0);
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::validate_uv_atlas;

    fn assert_outward(m: &Mesh) {
        for t in 0..m.triangle_count() {
            let n = m.face_normal(t);
            let [i, _, _] = m.triangles()[t];
            assert!(n.dot(m.vertex_normals()[i as usize]) > 0.0, "triangle {t} faces inward");
        }
    }

    #[test]
    fn cube_layout() {
        let c = cube();
        assert_eq!(c.positions().len(), 24);
        assert_eq!(c.triangle_count(), 12);
        assert_outward(&c);
        let (lo, hi) = c.bounds();
        assert_eq!(lo, Vec3::splat(-0.5));
        assert_eq!(hi, Vec3::splat(0.5));
    }

    #[test]
    fn primitives_have_valid_atlases() {
        for m in [icosphere(4), cylinder(16), torus(16, 8)] {
            assert_outward(&m);
            let r = validate_uv_atlas(&m, 128).unwrap();
            assert_eq!(r.overlap_texel_count, 0);
            assert!(r.coverage_fraction > 0.2);
        }
    }

    #[test]
    fn icosphere_is_closed_on_the_sphere() {
        let s = icosphere(3);
        assert_eq!(s.triangle_count(), 10 * 2 * 9);
        for p in s.positions() {
            assert!((p.length() - 0.5).abs() < 1e-12);
        }
        let (lo, hi) = s.bounds();
        assert!((hi.z - lo.z - 1.0).abs() < 1e-12);
    }
}
