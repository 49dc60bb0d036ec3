//! Scanline-free triangle rasterization shared by screen-space and UV-space
//! passes.
//!
//! Vertices are snapped to a 1/256 pixel grid and edge functions are evaluated
//! in integer arithmetic, so adjacent triangles never double-cover or leave a
//! gap along a shared edge. Pixel centers sit at half-integer coordinates and
//! samples exactly on an edge follow the top-left rule. Rows are processed in
//! bands in parallel; within a band triangles are visited in index order, so
//! exact depth ties always resolve to the lower triangle index.

use crate::math::Vec2;
use crate::par;

const SUBPIXEL_BITS: i64 = 8;
const SUBPIXEL: f64 = (1 << SUBPIXEL_BITS) as f64;
const HALF: i64 = 1 << (SUBPIXEL_BITS - 1);
const BAND_ROWS: usize = 16;

/// A triangle in continuous pixel coordinates with a per-vertex depth.
#[derive(Debug, Clone, Copy)]
pub struct ScreenTriangle {
    pub points: [Vec2; 3],
    pub depth: [f64; 3],
}

/// The surface sample owning a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    /// Barycentric weights with respect to the triangle's original vertex order.
    pub bary: [f64; 3],
    pub depth: f64,
}

#[derive(Debug, Clone)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Option<Fragment>>,
}

impl FragmentBuffer {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.width + x].as_ref()
    }
}

#[derive(Debug, Clone, Copy)]
struct Setup {
    v: [[i64; 2]; 3],
    /// Maps the (possibly re-wound) vertex slot back to the caller's vertex.
    order: [usize; 3],
    area: i64,
    depth: [f64; 3],
    min: [i64; 2],
    max: [i64; 2],
}

fn snap(p: Vec2) -> [i64; 2] {
    [(p.x * SUBPIXEL).round() as i64, (p.y * SUBPIXEL).round() as i64]
}

#[inline]
fn edge(a: [i64; 2], b: [i64; 2], p: [i64; 2]) -> i64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top or left edge of a positively wound triangle in y-down screen space.
#[inline]
fn owns_edge(a: [i64; 2], b: [i64; 2]) -> bool {
    let dy = b[1] - a[1];
    let dx = b[0] - a[0];
    dy < 0 || (dy == 0 && dx > 0)
}

fn setup(tri: &ScreenTriangle) -> Option<Setup> {
    if !tri.points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
        return None;
    }
    let mut v = [snap(tri.points[0]), snap(tri.points[1]), snap(tri.points[2])];
    let mut order = [0, 1, 2];
    let mut depth = tri.depth;
    let mut area = edge(v[0], v[1], v[2]);
    if area == 0 {
        return None;
    }
    if area < 0 {
        v.swap(1, 2);
        order.swap(1, 2);
        depth.swap(1, 2);
        area = -area;
    }
    let min = [
        v.iter().map(|p| p[0]).min().unwrap(),
        v.iter().map(|p| p[1]).min().unwrap(),
    ];
    let max = [
        v.iter().map(|p| p[0]).max().unwrap(),
        v.iter().map(|p| p[1]).max().unwrap(),
    ];
    Some(Setup {
        v,
        order,
        area,
        depth,
        min,
        max,
    })
}

/// Pixel index range `[lo, hi)` whose centers can fall inside `[min, max]`.
fn pixel_range(min: i64, max: i64, limit: usize) -> (usize, usize) {
    let lo = (min - HALF + (1 << SUBPIXEL_BITS) - 1).div_euclid(1 << SUBPIXEL_BITS);
    let hi = (max - HALF).div_euclid(1 << SUBPIXEL_BITS) + 1;
    (lo.clamp(0, limit as i64) as usize, hi.clamp(0, limit as i64) as usize)
}

/// Visits every pixel center of rows `[row_lo, row_hi)` covered by `s`.
fn for_each_covered(
    s: &Setup,
    width: usize,
    row_lo: usize,
    row_hi: usize,
    mut visit: impl FnMut(usize, usize, [f64; 3], f64),
) {
    let (x_lo, x_hi) = pixel_range(s.min[0], s.max[0], width);
    let (y_lo, y_hi) = pixel_range(s.min[1], s.max[1], row_hi);
    let y_lo = y_lo.max(row_lo);
    let own = [
        owns_edge(s.v[1], s.v[2]),
        owns_edge(s.v[2], s.v[0]),
        owns_edge(s.v[0], s.v[1]),
    ];
    let inv_area = 1.0 / s.area as f64;
    for y in y_lo..y_hi {
        let py = ((y as i64) << SUBPIXEL_BITS) + HALF;
        for x in x_lo..x_hi {
            let p = [((x as i64) << SUBPIXEL_BITS) + HALF, py];
            let w = [
                edge(s.v[1], s.v[2], p),
                edge(s.v[2], s.v[0], p),
                edge(s.v[0], s.v[1], p),
            ];
            let inside = (0..3).all(|i| w[i] > 0 || (w[i] == 0 && own[i]));
            if !inside {
                continue;
            }
            let local = [w[0] as f64 * inv_area, w[1] as f64 * inv_area, w[2] as f64 * inv_area];
            let depth = local[0] * s.depth[0] + local[1] * s.depth[1] + local[2] * s.depth[2];
            let mut bary = [0.0; 3];
            for i in 0..3 {
                bary[s.order[i]] = local[i];
            }
            visit(x, y, bary, depth);
        }
    }
}

/// Depth-tested rasterization. `None` entries (degenerate or culled
/// triangles) are skipped but keep their index.
pub fn rasterize(width: usize, height: usize, triangles: &[Option<ScreenTriangle>]) -> FragmentBuffer {
    let setups: Vec<Option<Setup>> = triangles.iter().map(|t| t.as_ref().and_then(setup)).collect();
    let mut fragments: Vec<Option<Fragment>> = vec![None; width * height];
    par::for_each_row(&mut fragments, width * BAND_ROWS, |band, rows| {
        let row_lo = band * BAND_ROWS;
        let row_hi = (row_lo + BAND_ROWS).min(height);
        for (t, s) in setups.iter().enumerate() {
            let Some(s) = s else { continue };
            for_each_covered(s, width, row_lo, row_hi, |x, y, bary, depth| {
                let slot = &mut rows[(y - row_lo) * width + x];
                let closer = match slot {
                    Some(f) => depth < f.depth,
                    None => true,
                };
                if closer {
                    *slot = Some(Fragment {
                        triangle: t as u32,
                        bary,
                        depth,
                    });
                }
            });
        }
    });
    FragmentBuffer {
        width,
        height,
        fragments,
    }
}

/// Number of triangles covering each pixel center (no depth test).
pub fn coverage_counts(width: usize, height: usize, triangles: &[Option<ScreenTriangle>]) -> Vec<u32> {
    let setups: Vec<Setup> = triangles.iter().filter_map(|t| t.as_ref().and_then(setup)).collect();
    let mut counts = vec![0u32; width * height];
    par::for_each_row(&mut counts, width * BAND_ROWS, |band, rows| {
        let row_lo = band * BAND_ROWS;
        let row_hi = (row_lo + BAND_ROWS).min(height);
        for s in &setups {
            for_each_covered(s, width, row_lo, row_hi, |x, y, _, _| {
                rows[(y - row_lo) * width + x] += 1;
            });
        }
    });
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<ScreenTriangle> {
        Some(ScreenTriangle {
            points: [Vec2::new(a.0, a.1), Vec2::new(b.0, b.1), Vec2::new(c.0, c.1)],
            depth: [1.0; 3],
        })
    }

    #[test]
    fn shared_edge_through_pixel_centers_is_covered_once() {
        // Square [0.5, 6.5]² split along a diagonal through pixel centers.
        let tris = vec![
            tri((0.5, 0.5), (6.5, 0.5), (6.5, 6.5)),
            tri((0.5, 0.5), (6.5, 6.5), (0.5, 6.5)),
        ];
        let counts = coverage_counts(8, 8, &tris);
        assert!(counts.iter().all(|&c| c <= 1));
        // Top and left boundaries at pixel centers are owned, bottom/right not.
        let covered: usize = counts.iter().map(|&c| c as usize).sum();
        assert_eq!(covered, 36);
        assert_eq!(counts[0], 1);
        assert_eq!(counts[6], 0);
    }

    #[test]
    fn winding_does_not_matter() {
        let a = coverage_counts(8, 8, &[tri((1.0, 1.0), (7.0, 1.0), (1.0, 7.0))]);
        let b = coverage_counts(8, 8, &[tri((1.0, 1.0), (1.0, 7.0), (7.0, 1.0))]);
        assert_eq!(a, b);
    }

    #[test]
    fn barycentrics_follow_input_vertex_order() {
        let buf = rasterize(8, 8, &[tri((0.0, 0.0), (0.0, 8.0), (8.0, 0.0))]);
        let f = buf.get(0, 0).unwrap();
        // Pixel (0.5, 0.5): weights (1 - 1/16 - 1/16, 1/16, 1/16).
        assert!((f.bary[1] - 0.0625).abs() < 1e-12);
        assert!((f.bary[2] - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn depth_ties_keep_lower_index() {
        let t = tri((0.0, 0.0), (8.0, 0.0), (0.0, 8.0));
        let buf = rasterize(8, 8, &[t, t]);
        assert!(buf.fragments.iter().flatten().all(|f| f.triangle == 0));
    }
}
