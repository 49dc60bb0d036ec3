//! Pixel fidelity, cross-view consistency and held-out re-render metrics.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::material::{MaterialSet, MaterialViews};
use crate::mesh::Mesh;
use crate::render::{rasterize_gbuffer, render_views, Camera, Light};

/// `10·log10(1 / MSE)` over all pixels or the masked ones; `+∞` when equal.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if let Some(m) = mask {
        if m.width != a.width || m.height != a.height {
            return Err(Error::ShapeMismatch("mask size differs from image".into()));
        }
    }
    let ch = a.channels;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data.chunks(ch).zip(b.data.chunks(ch)).enumerate() {
        if mask.is_some_and(|m| !m.data[i]) {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            let d = *x as f64 - *y as f64;
            sum += d * d;
        }
        count += ch;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    /// Maximum distance between decoded CCM positions of a pair.
    pub threshold: f64,
    /// Pixels sampled per view.
    pub samples_per_view: usize,
    pub seed: u64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            threshold: 1.0 / 128.0,
            samples_per_view: 4096,
            seed: 0,
        }
    }
}

/// FNV-1a over the view's CCM bits, mixed with `seed`.
fn content_seed(g: &crate::render::GBuffer, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for v in &g.ccm.data {
        for b in v.to_bits().to_le_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// RMS albedo difference over pixel pairs that show the same surface point in
/// two views. A pixel in view `i` is projected into every other view `j`; the
/// pair counts when the nearest pixel is covered, both decoded CCM positions
/// agree within `threshold`, and the surface faces both cameras. Sampling is
/// seeded per view from its content and squared errors are summed in sorted
/// order, so the result does not depend on view order.
pub fn cross_view_consistency(views: &MaterialViews, cameras: &[Camera], params: &ConsistencyParams) -> Result<f64> {
    if views.gbuffers.len() != cameras.len() || views.albedo.len() != cameras.len() {
        return Err(Error::ShapeMismatch("views and cameras differ in count".into()));
    }
    let mut errors = Vec::new();
    for (i, gi) in views.gbuffers.iter().enumerate() {
        let covered: Vec<usize> = (0..gi.mask.data.len()).filter(|&k| gi.mask.data[k]).collect();
        if covered.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(content_seed(gi, params.seed));
        let n = params.samples_per_view.min(covered.len());
        let mut picks: Vec<usize> = sample(&mut rng, covered.len(), n)
            .into_iter()
            .map(|k| covered[k])
            .collect();
        picks.sort_unstable();
        let w = gi.size();
        for k in picks {
            let (x, y) = (k % w, k / w);
            let p = gi.position(x, y);
            let ni = gi.decoded_normal(x, y);
            if ni.dot(cameras[i].to_viewer()) <= 0.0 {
                continue;
            }
            for (j, gj) in views.gbuffers.iter().enumerate() {
                if j == i {
                    continue;
                }
                let (s, _) = cameras[j].project(p);
                let (px, py) = (s.x.floor(), s.y.floor());
                let size = gj.size() as f64;
                if px < 0.0 || py < 0.0 || px >= size || py >= size {
                    continue;
                }
                let (px, py) = (px as usize, py as usize);
                if !gj.mask.get(px, py) || (gj.position(px, py) - p).length() > params.threshold {
                    continue;
                }
                if gj.decoded_normal(px, py).dot(cameras[j].to_viewer()) <= 0.0 {
                    continue;
                }
                let a = views.albedo[i].pixel(x, y);
                let b = views.albedo[j].pixel(px, py);
                let se: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(u, v)| (*u as f64 - *v as f64).powi(2))
                    .sum::<f64>()
                    / 3.0;
                errors.push(se);
            }
        }
    }
    if errors.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    errors.sort_by(f64::total_cmp);
    Ok((errors.iter().sum::<f64>() / errors.len() as f64).sqrt())
}

/// Mean PSNR over views between renders of `baked` and `gt`, restricted to the
/// mesh silhouette.
pub fn heldout_rerender(
    mesh: &Mesh,
    baked: &MaterialSet,
    gt: &MaterialSet,
    cameras: &[Camera],
    light: &Light,
) -> Result<f64> {
    let a = render_views(mesh, baked, cameras, light)?;
    let b = render_views(mesh, gt, cameras, light)?;
    let mut total = 0.0;
    for (k, cam) in cameras.iter().enumerate() {
        let g = rasterize_gbuffer(mesh, cam)?;
        total += psnr(&a[k].clamp01(), &b[k].clamp01(), Some(&g.mask))?;
    }
    Ok(total / cameras.len() as f64)
}

/// Held-out cameras at ±45° azimuth and 30° elevation.
pub fn heldout_cameras(image_size: usize) -> Vec<Camera> {
    [45.0f64, 225.0]
        .iter()
        .map(|az| {
            let (a, e) = (az.to_radians(), 30f64.to_radians());
            let pos = crate::math::Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
            let look = -pos;
            let right = look.cross(crate::math::Vec3::Z).normalize();
            let up = right.cross(look).normalize();
            Camera::orthographic(look, up, image_size)
        })
        .collect()
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() && *x > 0.0 => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        Ok(match Option::<Raw>::deserialize(d)? {
            None => None,
            Some(Raw::Num(x)) => Some(x),
            Some(Raw::Str(s)) if s == "inf" => Some(f64::INFINITY),
            Some(Raw::Str(s)) => return Err(serde::de::Error::custom(format!("bad metric {s}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub asset: String,
    #[serde(with = "inf_as_string")]
    pub psnr_db: Option<f64>,
    pub cross_view_consistency_rmse: Option<f64>,
    #[serde(with = "inf_as_string")]
    pub heldout_rerender_psnr_db: Option<f64>,
}

/// Aggregate report. Missing entries (e.g. no correspondences) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub note: String,
    #[serde(with = "inf_as_string")]
    pub psnr_db: Option<f64>,
    pub cross_view_consistency_rmse: Option<f64>,
    #[serde(with = "inf_as_string")]
    pub heldout_rerender_psnr_db: Option<f64>,
    pub assets: Vec<AssetMetrics>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    pub fn from_assets(assets: Vec<AssetMetrics>) -> MetricReport {
        MetricReport {
            note: "Ground truth is synthetic: procedural materials rendered by this tool.".into(),
            psnr_db: mean(assets.iter().map(|a| a.psnr_db)),
            cross_view_consistency_rmse: mean(assets.iter().map(|a| a.cross_view_consistency_rmse)),
            heldout_rerender_psnr_db: mean(assets.iter().map(|a| a.heldout_rerender_psnr_db)),
            assets,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>, digits: usize| match v {
            Some(x) if x.is_infinite() => "inf".to_string(),
            Some(x) => format!("{x:.digits$}"),
            None => "n/a".to_string(),
        };
        let mut s = format!("{}\n\n", self.note);
        s.push_str("| Asset | PSNR (dB) ↑ | Cross-view RMSE ↓ | Held-out PSNR (dB) ↑ |\n");
        s.push_str("|---|---|---|---|\n");
        for a in &self.assets {
            s.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                a.asset,
                cell(a.psnr_db, 2),
                cell(a.cross_view_consistency_rmse, 4),
                cell(a.heldout_rerender_psnr_db, 2)
            ));
        }
        s.push_str(&format!(
            "| **mean** | {} | {} | {} |\n",
            cell(self.psnr_db, 2),
            cell(self.cross_view_consistency_rmse, 4),
            cell(self.heldout_rerender_psnr_db, 2)
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use crate::procedural;
    use crate::render::{make_view_set, sample_material_views};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 3, |_, _| (0..3).map(|_| rng.gen::<f32>()).collect())
    }

    #[test]
    fn identical_is_infinite() {
        let a = random_image(1, 8, 8);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        let a = Image::filled(8, 8, 3, 0.25);
        let b = a.map(|v| v + 0.1);
        // f32 storage of 0.35 - 0.25 is not exactly 0.1.
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn matches_double_loop() {
        let (a, b) = (random_image(2, 7, 5), random_image(3, 7, 5));
        let mut mask = Mask::new(7, 5);
        for i in (0..35).step_by(3) {
            mask.data[i] = true;
        }
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                if !mask.get(x, y) {
                    continue;
                }
                for c in 0..3 {
                    let d = a.pixel(x, y)[c] as f64 - b.pixel(x, y)[c] as f64;
                    sum += d * d;
                    n += 1.0;
                }
            }
        }
        let want = 10.0 * (n / sum).log10();
        assert!((psnr(&a, &b, Some(&mask)).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        let a = random_image(4, 4, 4);
        assert_eq!(psnr(&a, &a, Some(&Mask::new(4, 4))), Err(Error::EmptyMask));
        assert!(matches!(
            psnr(&a, &random_image(4, 4, 5), None),
            Err(Error::ShapeMismatch(_))
        ));
    }

    fn sphere_views(n: usize, size: usize) -> (MaterialViews, Vec<Camera>) {
        let sphere = primitives::icosphere(8);
        let cams = make_view_set(n, size).unwrap();
        let gt = procedural::smooth_reference_material(256);
        let mut views = sample_material_views(&sphere, &gt, &cams).unwrap();
        views.albedo = render_views(&sphere, &gt, &cams, &Light::ambient_only(1.0)).unwrap();
        (views, cams)
    }

    #[test]
    fn gt_renders_are_consistent() {
        let (views, cams) = sphere_views(6, 128);
        let rmse = cross_view_consistency(&views, &cams, &ConsistencyParams::default()).unwrap();
        assert!(rmse <= 0.02, "{rmse}");
    }

    #[test]
    fn shifted_view_is_inconsistent() {
        // With four views every view overlaps two others, so pairs touching
        // view 0 make up half of all pairs: RMSE = 0.5 / √2 ≈ 0.354. Six axis
        // views give one third and 0.289.
        let (mut views, cams) = sphere_views(4, 64);
        views.albedo[0] = views.albedo[0].map(|v| v + 0.5);
        let rmse = cross_view_consistency(&views, &cams, &ConsistencyParams::default()).unwrap();
        assert!(rmse >= 0.3, "{rmse}");
    }

    #[test]
    fn plane_front_and_back_do_not_correspond() {
        let quad = primitives::quad();
        let cams = make_view_set(6, 32).unwrap()[4..6].to_vec();
        let mat = MaterialSet::constant(8, [0.5; 3], 0.5, 0.0);
        let views = sample_material_views(&quad, &mat, &cams).unwrap();
        assert_eq!(
            cross_view_consistency(&views, &cams, &ConsistencyParams::default()),
            Err(Error::NoCorrespondences)
        );
    }

    #[test]
    fn consistency_ignores_view_order() {
        let (mut views, cams) = sphere_views(6, 48);
        views.albedo[2] = views.albedo[2].map(|v| v * 0.7);
        let order = [3, 0, 5, 1, 4, 2];
        let p = ConsistencyParams::default();
        let a = cross_view_consistency(&views, &cams, &p).unwrap();
        let permuted: Vec<Camera> = order.iter().map(|&i| cams[i]).collect();
        let b = cross_view_consistency(&views.permuted(&order), &permuted, &p).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn heldout_identity_and_gross_mismatch() {
        let sphere = primitives::icosphere(6);
        let gt = procedural::smooth_reference_material(64);
        let cams = heldout_cameras(48);
        let light = Light::ambient_only(1.0);
        assert_eq!(
            heldout_rerender(&sphere, &gt, &gt, &cams, &light).unwrap(),
            f64::INFINITY
        );
        let black = MaterialSet::constant(64, [0.0; 3], 0.5, 0.0);
        assert!(heldout_rerender(&sphere, &black, &gt, &cams, &light).unwrap() <= 15.0);
    }

    #[test]
    fn report_serializes_infinity() {
        let r = MetricReport::from_assets(vec![AssetMetrics {
            asset: "cube".into(),
            psnr_db: Some(f64::INFINITY),
            cross_view_consistency_rmse: Some(0.01),
            heldout_rerender_psnr_db: None,
        }]);
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_markdown().contains("| cube | inf | 0.0100 | n/a |"));
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_mask_consistent(s1 in any::<u64>(), s2 in any::<u64>(), bits in any::<u64>()) {
            let (a, b) = (random_image(s1, 8, 8), random_image(s2, 8, 8));
            prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
            let mut mask = Mask::new(8, 8);
            for i in 0..64 { mask.data[i] = (bits >> i) & 1 == 1; }
            mask.data[0] = true;
            // Zeroing unmasked pixels in both images does not change the value.
            let zero = |img: &Image| {
                let mut out = img.clone();
                for (i, px) in out.data.chunks_mut(3).enumerate() {
                    if !mask.data[i] { px.iter_mut().for_each(|v| *v = 0.0); }
                }
                out
            };
            prop_assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), psnr(&zero(&a), &zero(&b), Some(&mask)).unwrap());
        }
    }
}
