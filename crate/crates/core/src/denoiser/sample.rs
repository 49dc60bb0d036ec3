use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cond::{decode_branch, Conditioning, ALBEDO_PIXEL_CHANNELS, MR_PIXEL_CHANNELS};
use super::model::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::material::MaterialViews;
use crate::nn::{randn, Tensor};
use crate::render::GBuffer;

/// `x_t = (1 − t)·x0 + t·noise`; the matching velocity target is `noise − x0`.
pub fn flow_interpolate(x0: &Tensor, noise: &Tensor, t: f64) -> Result<Tensor> {
    let mut x = x0.scale(1.0 - t);
    if x.shape() != noise.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x0.shape(), noise.shape())));
    }
    x.axpy(t, noise);
    Ok(x)
}

pub trait VelocityField {
    fn velocity(&self, state: &[Tensor], t: f64) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Euler,
    Heun,
}

fn step(x: &[Tensor], v: &[Tensor], h: f64) -> Vec<Tensor> {
    x.iter()
        .zip(v)
        .map(|(a, b)| {
            let mut o = a.clone();
            o.axpy(h, b);
            o
        })
        .collect()
}

/// Integrates from `t = 1` to `t = 0` on a uniform grid of `steps` intervals.
pub fn integrate(field: &dyn VelocityField, start: Vec<Tensor>, steps: usize, solver: Solver) -> Result<Vec<Tensor>> {
    if steps == 0 {
        return Err(Error::InvalidSteps(0));
    }
    let mut x = start;
    for k in 0..steps {
        let t0 = 1.0 - k as f64 / steps as f64;
        let t1 = 1.0 - (k + 1) as f64 / steps as f64;
        let h = t1 - t0;
        let v0 = field.velocity(&x, t0)?;
        x = match solver {
            Solver::Euler => step(&x, &v0, h),
            Solver::Heun => {
                let pred = step(&x, &v0, h);
                let v1 = field.velocity(&pred, t1)?;
                let avg: Vec<Tensor> = v0
                    .iter()
                    .zip(&v1)
                    .map(|(a, b)| a.add(b).map(|s| s.scale(0.5)))
                    .collect::<Result<_>>()?;
                step(&x, &avg, h)
            }
        };
    }
    Ok(x)
}

/// Reference-guided velocity `v_u + s·(v_c − v_u)`; `s = 1` skips the
/// unconditional pass.
pub struct Guided<'a> {
    pub model: &'a Denoiser,
    pub cond: &'a Conditioning,
    pub uncond: Conditioning,
    pub scale: f64,
}

impl<'a> Guided<'a> {
    pub fn new(model: &'a Denoiser, cond: &'a Conditioning, scale: f64) -> Guided<'a> {
        Guided {
            model,
            cond,
            uncond: cond.without_reference(),
            scale,
        }
    }
}

impl VelocityField for Guided<'_> {
    fn velocity(&self, state: &[Tensor], t: f64) -> Result<Vec<Tensor>> {
        let vc = self.model.velocity(state, t, self.cond)?;
        if self.scale == 1.0 {
            return Ok(vc);
        }
        let vu = self.model.velocity(state, t, &self.uncond)?;
        vu.iter()
            .zip(&vc)
            .map(|(u, c)| {
                let mut o = u.clone();
                o.axpy(self.scale, &c.sub(u)?);
                Ok(o)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
    pub solver: Solver,
}

impl Default for SampleSettings {
    fn default() -> Self {
        SampleSettings {
            steps: 20,
            cfg_scale: 1.5,
            seed: 0,
            solver: Solver::Euler,
        }
    }
}

/// Decoded per-view predictions at model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledViews {
    pub albedo: Vec<Image>,
    /// R = 0, G = roughness, B = metallic.
    pub mr: Vec<Image>,
    pub normal: Option<Vec<Image>>,
}

impl SampledViews {
    pub fn into_material_views(self, gbuffers: Vec<GBuffer>) -> Result<MaterialViews> {
        if gbuffers.len() != self.albedo.len() {
            return Err(Error::ShapeMismatch("one g-buffer per sampled view is required".into()));
        }
        Ok(MaterialViews {
            albedo: self.albedo,
            mr: self.mr,
            gbuffers,
        })
    }
}

pub fn decode_state(model: &Denoiser, state: &[Tensor]) -> SampledViews {
    let cfg = &model.config;
    SampledViews {
        albedo: decode_branch(cfg, &state[0], &ALBEDO_PIXEL_CHANNELS),
        mr: decode_branch(cfg, &state[1], &MR_PIXEL_CHANNELS),
        normal: state.get(2).map(|s| decode_branch(cfg, s, &ALBEDO_PIXEL_CHANNELS)),
    }
}

/// Draws the seeded starting noise for every branch.
pub fn initial_noise(model: &Denoiser, seed: u64) -> Vec<Tensor> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfg.channels()
        .iter()
        .map(|c| randn(&[cfg.tokens(), cfg.patch_dim(c.pixel_channels())], 1.0, &mut rng))
        .collect()
}

/// Generates all views jointly from seeded noise.
pub fn sample(model: &Denoiser, cond: &Conditioning, settings: &SampleSettings) -> Result<SampledViews> {
    if settings.steps == 0 {
        return Err(Error::InvalidSteps(0));
    }
    if model.trained_steps == 0 {
        return Err(Error::UntrainedModel);
    }
    let field = Guided::new(model, cond, settings.cfg_scale);
    let x = integrate(
        &field,
        initial_noise(model, settings.seed),
        settings.steps,
        settings.solver,
    )?;
    Ok(decode_state(model, &x))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl VelocityField for Constant {
        fn velocity(&self, state: &[Tensor], _t: f64) -> Result<Vec<Tensor>> {
            Ok(state.iter().map(|s| s.map(|_| self.0)).collect())
        }
    }

    /// `v = x` has the exact solution `x(t) = x(1)·e^(t − 1)`.
    struct Exponential;

    impl VelocityField for Exponential {
        fn velocity(&self, state: &[Tensor], _t: f64) -> Result<Vec<Tensor>> {
            Ok(state.to_vec())
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![-1.0, 5.0]).unwrap();
        assert_eq!(flow_interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(flow_interpolate(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn constant_field_moves_by_minus_v() {
        let start = vec![Tensor::new(&[1, 2], vec![0.5, -0.5]).unwrap()];
        for solver in [Solver::Euler, Solver::Heun] {
            let out = integrate(&Constant(2.0), start.clone(), 7, solver).unwrap();
            for (o, s) in out[0].data().iter().zip(start[0].data()) {
                assert!((o - (s - 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heun_beats_euler_on_a_curved_field() {
        let start = vec![Tensor::new(&[1, 1], vec![1.0]).unwrap()];
        let exact = (-1.0f64).exp();
        let e = (integrate(&Exponential, start.clone(), 8, Solver::Euler).unwrap()[0].data()[0] - exact).abs();
        let h = (integrate(&Exponential, start, 8, Solver::Heun).unwrap()[0].data()[0] - exact).abs();
        assert!(h < e / 10.0, "euler {e} heun {h}");
    }

    #[test]
    fn zero_steps_is_rejected() {
        assert_eq!(
            integrate(&Constant(0.0), vec![], 0, Solver::Euler).unwrap_err(),
            Error::InvalidSteps(0)
        );
    }
}
