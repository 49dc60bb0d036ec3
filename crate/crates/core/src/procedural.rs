//! Procedural ground-truth textures for synthetic data and oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};
use crate::material::MaterialSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlbedoPattern {
    /// `cells × cells` checkerboard over the UV square.
    Checker { cells: usize, a: [f32; 3], b: [f32; 3] },
    /// Linear ramp from `a` to `b` along direction `angle` (radians).
    Gradient { a: [f32; 3], b: [f32; 3], angle: f64 },
    /// Smoothly interpolated value noise on a `scale × scale` lattice.
    Noise {
        seed: u64,
        scale: usize,
        a: [f32; 3],
        b: [f32; 3],
    },
    /// Sum of two sinusoids per channel; smooth and band-limited.
    Waves {
        freq: [f64; 3],
        phase: [f64; 3],
        base: [f32; 3],
        amp: f32,
    },
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> Vec<f32> {
    (0..3).map(|c| a[c] + (b[c] - a[c]) * t).collect()
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in [0, 1] at `(u, v)` over a lattice of `scale` cells.
fn value_noise(lattice: &[f64], scale: usize, u: f64, v: f64) -> f64 {
    let n = scale + 1;
    let (x, y) = (u * scale as f64, v * scale as f64);
    let (x0, y0) = ((x.floor() as usize).min(scale - 1), (y.floor() as usize).min(scale - 1));
    let (tx, ty) = (smoothstep(x - x0 as f64), smoothstep(y - y0 as f64));
    let at = |i: usize, j: usize| lattice[j * n + i];
    let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * tx;
    let bottom = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * tx;
    top + (bottom - top) * ty
}

/// Evaluates the pattern at every texel center (v up).
pub fn albedo_texture(pattern: &AlbedoPattern, resolution: usize) -> Image {
    let r = resolution as f64;
    let lattice = match pattern {
        AlbedoPattern::Noise { seed, scale, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..(scale + 1) * (scale + 1)).map(|_| rng.gen::<f64>()).collect()
        }
        _ => Vec::new(),
    };
    Image::from_fn(resolution, resolution, 3, |x, y| {
        let u = (x as f64 + 0.5) / r;
        let v = 1.0 - (y as f64 + 0.5) / r;
        match pattern {
            AlbedoPattern::Checker { cells, a, b } => {
                let (i, j) = ((u * *cells as f64) as usize, (v * *cells as f64) as usize);
                if (i + j) % 2 == 0 {
                    a.to_vec()
                } else {
                    b.to_vec()
                }
            }
            AlbedoPattern::Gradient { a, b, angle } => {
                let t = ((u - 0.5) * angle.cos() + (v - 0.5) * angle.sin()) / std::f64::consts::SQRT_2 + 0.5;
                mix(*a, *b, t.clamp(0.0, 1.0) as f32)
            }
            AlbedoPattern::Noise { scale, a, b, .. } => {
                mix(*a, *b, value_noise(&lattice, (*scale).max(1), u, v) as f32)
            }
            AlbedoPattern::Waves { freq, phase, base, amp } => (0..3)
                .map(|c| {
                    let w = (std::f64::consts::TAU * (freq[c] * u + phase[c])).sin()
                        * (std::f64::consts::TAU * (freq[(c + 1) % 3] * v + phase[(c + 2) % 3])).cos();
                    (base[c] + amp * w as f32).clamp(0.0, 1.0)
                })
                .collect(),
        }
    })
}

/// Piecewise-constant metallic/roughness over a `cells × cells` grid; metallic
/// is exactly 0 or 1 per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrRegions {
    pub cells: usize,
    pub roughness: Vec<f32>,
    pub metallic: Vec<f32>,
}

impl MrRegions {
    pub fn random(rng: &mut impl Rng, cells: usize) -> MrRegions {
        let n = cells * cells;
        MrRegions {
            cells,
            roughness: (0..n).map(|_| rng.gen_range(0.25f32..0.9)).collect(),
            metallic: (0..n).map(|_| if rng.gen_bool(0.35) { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn texture(&self, resolution: usize) -> Image {
        let r = resolution as f64;
        Image::from_fn(resolution, resolution, 3, |x, y| {
            let u = (x as f64 + 0.5) / r;
            let v = 1.0 - (y as f64 + 0.5) / r;
            let i = ((u * self.cells as f64) as usize).min(self.cells - 1);
            let j = ((v * self.cells as f64) as usize).min(self.cells - 1);
            let k = j * self.cells + i;
            vec![0.0, self.roughness[k], self.metallic[k]]
        })
    }
}

pub fn material_from(pattern: &AlbedoPattern, mr: &MrRegions, resolution: usize) -> MaterialSet {
    MaterialSet {
        albedo: albedo_texture(pattern, resolution),
        mr: mr.texture(resolution),
        texel_mask: Mask {
            width: resolution,
            height: resolution,
            data: vec![true; resolution * resolution],
        },
    }
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [0; 3].map(|_| rng.gen_range(0.05f32..0.95))
}

/// One of the checker / gradient / noise families with random colors.
pub fn random_pattern(rng: &mut impl Rng) -> AlbedoPattern {
    let (a, b) = (random_color(rng), random_color(rng));
    match rng.gen_range(0..3) {
        0 => AlbedoPattern::Checker {
            cells: rng.gen_range(2..=6),
            a,
            b,
        },
        1 => AlbedoPattern::Gradient {
            a,
            b,
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
        },
        _ => AlbedoPattern::Noise {
            seed: rng.gen(),
            scale: rng.gen_range(2..=6),
            a,
            b,
        },
    }
}

/// Smooth multi-frequency material used by the render/bake round-trip checks.
pub fn smooth_reference_material(resolution: usize) -> MaterialSet {
    let pattern = AlbedoPattern::Waves {
        freq: [2.0, 3.0, 1.0],
        phase: [0.1, 0.35, 0.7],
        base: [0.55, 0.45, 0.5],
        amp: 0.35,
    };
    let mr = MrRegions {
        cells: 1,
        roughness: vec![0.6],
        metallic: vec![0.0],
    };
    let mut set = material_from(&pattern, &mr, resolution);
    let rough = albedo_texture(
        &AlbedoPattern::Gradient {
            a: [0.3; 3],
            b: [0.9; 3],
            angle: 0.8,
        },
        resolution,
    );
    for (px, g) in set.mr.data.chunks_mut(3).zip(rough.data.chunks(3)) {
        px[1] = g[0];
        px[2] = 1.0 - g[1];
    }
    set
}
