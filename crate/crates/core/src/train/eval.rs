//! Evaluation probes used to monitor and compare training runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{illumination_invariance_loss, prepare_example, Crops, Example};
use crate::denoiser::cond::{decode_branch, ALBEDO_PIXEL_CHANNELS};
use crate::denoiser::{flow_interpolate, sample, Conditioning, Denoiser, SampleSettings, SampledViews};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::nn::{randn, Tensor};
use crate::train::Asset;

/// Whole-view example of `asset` under lights `(a, b)` with the reference kept.
pub fn full_example(model: &Denoiser, asset: &Asset, lights: (usize, usize)) -> Result<Example> {
    let crops = Crops::full(asset.cameras.len(), asset.gbuffers[0].size());
    prepare_example(&model.config, asset, lights, &crops, false)
}

fn probe_noise(targets: &[Tensor], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    targets.iter().map(|x| randn(x.shape(), 1.0, &mut rng)).collect()
}

/// Flow loss (summed over branches) of the first lighting pass, averaged
/// over the given times with noise fixed by `seed`.
pub fn probe_flow_loss(model: &Denoiser, ex: &Example, times: &[f64], seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let noise = probe_noise(&ex.targets, seed.wrapping_add(k as u64));
        let x_t = ex
            .targets
            .iter()
            .zip(&noise)
            .map(|(x0, n)| flow_interpolate(x0, n, t))
            .collect::<Result<Vec<_>>>()?;
        let v = model.velocity(&x_t, t, &ex.cond_a)?;
        for ((v, n), x0) in v.iter().zip(&noise).zip(&ex.targets) {
            total += v.sub(&n.sub(x0)?)?.sq_norm() / v.len() as f64;
        }
    }
    Ok(total / times.len() as f64)
}

/// Per-view albedo of the one-step estimate `x_t − t·v`.
pub fn one_step_albedo(model: &Denoiser, cond: &Conditioning, x_t: &[Tensor], t: f64) -> Result<Vec<Image>> {
    let v = model.velocity(x_t, t, cond)?;
    let mut x0 = x_t[0].clone();
    x0.axpy(-t, &v[0]);
    Ok(decode_branch(&model.config, &x0, &ALBEDO_PIXEL_CHANNELS))
}

/// Mean squared difference between one-step albedo estimates conditioned on
/// references under lights 0 and 1, with identical `x_t`, averaged over
/// `times`.
pub fn albedo_gap(model: &Denoiser, asset: &Asset, times: &[f64], seed: u64) -> Result<f64> {
    let ex = full_example(model, asset, (0, 1))?;
    let mut total = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let noise = probe_noise(&ex.targets, seed.wrapping_add(k as u64));
        let x_t = ex
            .targets
            .iter()
            .zip(&noise)
            .map(|(x0, n)| flow_interpolate(x0, n, t))
            .collect::<Result<Vec<_>>>()?;
        let a = one_step_albedo(model, &ex.cond_a, &x_t, t)?;
        let b = one_step_albedo(model, &ex.cond_b, &x_t, t)?;
        total += illumination_invariance_loss(&a, &b, &ex.cond_a.masks)?;
    }
    Ok(total / times.len() as f64)
}

/// Samples all views of a dataset asset, conditioned on its reference under
/// `light`.
pub fn sample_asset(
    model: &Denoiser,
    asset: &Asset,
    light: usize,
    settings: &SampleSettings,
) -> Result<(SampledViews, Example)> {
    let ex = full_example(model, asset, (light, light))?;
    Ok((sample(model, &ex.cond_a, settings)?, ex))
}

/// Mean masked albedo PSNR of sampled views against the asset's targets at
/// model resolution.
pub fn albedo_psnr(model: &Denoiser, sampled: &SampledViews, asset: &Asset, ex: &Example) -> Result<f64> {
    let s = model.config.image_size;
    if sampled.albedo.len() != asset.albedo.len() {
        return Err(Error::ShapeMismatch("sampled and target view counts differ".into()));
    }
    let mut total = 0.0;
    for ((out, gt), mask) in sampled.albedo.iter().zip(&asset.albedo).zip(&ex.cond_a.masks) {
        total += psnr(out, &gt.resample(s), Some(mask))?;
    }
    Ok(total / sampled.albedo.len() as f64)
}
