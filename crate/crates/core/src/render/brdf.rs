//! Single-bounce metallic-roughness shading (Lambert + GGX / height-correlated
//! Smith / Schlick), following the glTF 2.0 reference model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSample {
    pub albedo: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
}

/// Directional light plus a uniform ambient term. `direction` points from the
/// surface toward the light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: Vec3,
    pub radiance: [f64; 3],
    pub ambient: [f64; 3],
}

impl Default for Light {
    /// Key light from above and to the front-right plus moderate ambient.
    fn default() -> Light {
        Light {
            direction: Vec3::new(0.3, 0.4, 0.87).normalize(),
            radiance: [2.0; 3],
            ambient: [0.2; 3],
        }
    }
}

impl Light {
    pub fn ambient_only(level: f64) -> Light {
        Light {
            direction: Vec3::Z,
            radiance: [0.0; 3],
            ambient: [level; 3],
        }
    }
}

/// Outgoing radiance split into its three contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingTerms {
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub ambient: [f64; 3],
}

impl ShadingTerms {
    pub fn total(&self) -> [f64; 3] {
        std::array::from_fn(|c| (self.diffuse[c] + self.specular[c] + self.ambient[c]).max(0.0))
    }
}

/// Smallest GGX alpha used, so perfectly smooth inputs stay finite.
const MIN_ALPHA: f64 = 1e-3;
const MIN_COS: f64 = 1e-4;

pub fn ggx_distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Height-correlated Smith visibility `G / (4 NdotL NdotV)`.
pub fn smith_visibility(n_dot_l: f64, n_dot_v: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let gv = n_dot_l * (n_dot_v * n_dot_v * (1.0 - a2) + a2).sqrt();
    let gl = n_dot_v * (n_dot_l * n_dot_l * (1.0 - a2) + a2).sqrt();
    let sum = gv + gl;
    if sum > 0.0 {
        0.5 / sum
    } else {
        0.0
    }
}

pub fn schlick_fresnel(f0: f64, v_dot_h: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - v_dot_h.clamp(0.0, 1.0)).powi(5)
}

pub fn shade_terms(s: &MaterialSample, normal: Vec3, view: Vec3, light: &Light) -> ShadingTerms {
    let ambient = std::array::from_fn(|c| light.ambient[c] * s.albedo[c]);
    let n_dot_l = normal.dot(light.direction);
    if n_dot_l <= 0.0 {
        return ShadingTerms {
            diffuse: [0.0; 3],
            specular: [0.0; 3],
            ambient,
        };
    }
    let n_dot_v = normal.dot(view).max(MIN_COS);
    let h = (view + light.direction).normalize();
    let n_dot_h = normal.dot(h).max(0.0);
    let v_dot_h = view.dot(h).max(0.0);
    let alpha = (s.roughness * s.roughness).max(MIN_ALPHA);
    let d = ggx_distribution(n_dot_h, alpha);
    let vis = smith_visibility(n_dot_l, n_dot_v, alpha);
    let mut diffuse = [0.0; 3];
    let mut specular = [0.0; 3];
    for c in 0..3 {
        let f0 = 0.04 * (1.0 - s.metallic) + s.albedo[c] * s.metallic;
        let f = schlick_fresnel(f0, v_dot_h);
        let e = light.radiance[c] * n_dot_l;
        diffuse[c] = (1.0 - f) * (1.0 - s.metallic) * s.albedo[c] / PI * e;
        specular[c] = f * d * vis * e;
    }
    ShadingTerms {
        diffuse,
        specular,
        ambient,
    }
}

pub fn shade_brdf(s: &MaterialSample, normal: Vec3, view: Vec3, light: &Light) -> [f64; 3] {
    shade_terms(s, normal, view, light).total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(albedo: [f64; 3], metallic: f64, roughness: f64) -> MaterialSample {
        MaterialSample {
            albedo,
            metallic,
            roughness,
        }
    }

    #[test]
    fn rough_dielectric_head_on() {
        let light = Light {
            direction: Vec3::Z,
            radiance: [PI; 3],
            ambient: [0.0; 3],
        };
        let t = shade_terms(&sample([1.0, 0.0, 0.0], 0.0, 1.0), Vec3::Z, Vec3::Z, &light);
        // (1 - F) * albedo / π * π with F = 0.04.
        assert!((t.diffuse[0] - 0.96).abs() < 1e-12);
        assert_eq!(t.diffuse[1], 0.0);
        // D = 1/π, V = 1/4, F = 0.04, times π.
        assert!((t.specular[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn back_facing_light_is_black() {
        let light = Light {
            direction: -Vec3::Z,
            radiance: [5.0; 3],
            ambient: [0.0; 3],
        };
        assert_eq!(
            shade_brdf(&sample([0.7; 3], 0.3, 0.5), Vec3::Z, Vec3::Z, &light),
            [0.0; 3]
        );
    }

    #[test]
    fn ambient_only_scales_albedo() {
        let out = shade_brdf(
            &sample([0.2, 0.4, 0.8], 1.0, 0.1),
            Vec3::Z,
            Vec3::X,
            &Light::ambient_only(0.5),
        );
        assert_eq!(out, [0.1, 0.2, 0.4]);
    }

    #[test]
    fn mirror_metal_peak_matches_closed_form() {
        // N = V = L: D = 1/(πα²), V = 1/4, F = 1, so π·D·V = 1/(4α²).
        let light = Light {
            direction: Vec3::Z,
            radiance: [PI; 3],
            ambient: [0.0; 3],
        };
        for r in [0.3, 0.5, 0.8] {
            let out = shade_brdf(&sample([1.0; 3], 1.0, r), Vec3::Z, Vec3::Z, &light);
            let alpha: f64 = r * r;
            assert!((out[0] - 1.0 / (4.0 * alpha * alpha)).abs() < 1e-9);
        }
    }

    fn unit(theta: f64, phi: f64) -> Vec3 {
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    proptest! {
        // The bound holds only for rough surfaces: at grazing mirror
        // configurations a metal peaks near 1/(4α³).
        #[test]
        fn rough_surfaces_stay_bounded(
            albedo in prop::array::uniform3(0.0f64..=1.0),
            metallic in 0.0f64..=1.0,
            roughness in 0.75f64..=1.0,
            lt in 0.0f64..1.57, lp in 0.0f64..6.28,
            vt in 0.0f64..1.57, vp in 0.0f64..6.28,
            radiance in 0.0f64..=PI,
        ) {
            let light = Light { direction: unit(lt, lp), radiance: [radiance; 3], ambient: [0.0; 3] };
            let out = shade_brdf(&sample(albedo, metallic, roughness), Vec3::Z, unit(vt, vp), &light);
            for c in out {
                prop_assert!((0.0..=1.5).contains(&c), "{c}");
            }
        }

        #[test]
        fn output_is_nonnegative_and_finite(
            albedo in prop::array::uniform3(0.0f64..=1.0),
            metallic in 0.0f64..=1.0,
            roughness in 0.0f64..=1.0,
            lt in 0.0f64..3.14, lp in 0.0f64..6.28,
            vt in 0.0f64..3.14, vp in 0.0f64..6.28,
        ) {
            let light = Light { direction: unit(lt, lp), radiance: [PI; 3], ambient: [0.1; 3] };
            let out = shade_brdf(&sample(albedo, metallic, roughness), Vec3::Z, unit(vt, vp), &light);
            for c in out {
                prop_assert!(c.is_finite() && c >= 0.0);
            }
        }
    }
}
