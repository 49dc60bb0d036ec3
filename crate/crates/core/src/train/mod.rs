//! Two-phase flow-matching training with an illumination-invariance term.
//!
//! Phase 1 trains on whole views. Phase 2 crops every view (same fraction,
//! independent origins) and the reference image before resampling to model
//! resolution, so the network sees surface detail at a higher effective
//! resolution while its geometry conditioning stays aligned with the crop.

pub mod dataset;
pub mod eval;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{make_dataset, make_synthetic_dataset, Asset, Dataset, DatasetSpec};

use crate::denoiser::cond::{material_tokens, patchify, ViewGeometry};
use crate::denoiser::{flow_interpolate, Conditioning, Denoiser, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::image::{CropWindow, Image, Mask};
use crate::nn::{randn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub flow: f64,
    pub illum: f64,
}

impl Default for LossWeights {
    /// The illumination term compares one-step albedo estimates in squared
    /// [0, 1] units and is orders of magnitude smaller than the flow term.
    /// Much larger weights make ignoring the reference the cheapest way to
    /// satisfy it.
    fn default() -> Self {
        LossWeights {
            flow: 1.0,
            illum: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: u8,
    pub views: usize,
    pub image_size: usize,
    /// Crop fraction range sampled per step in phase 2.
    pub zoom_range: [f64; 2],
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear learning-rate ramp length; 0 disables it.
    pub warmup_steps: usize,
    /// After warmup the rate follows a cosine from `learning_rate` down to
    /// `learning_rate · min_lr_ratio` at the last step.
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    pub steps: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Probability of training an example without its reference, which is
    /// what the unconditional half of guidance queries.
    pub reference_dropout: f64,
    pub model: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: 1,
            views: 6,
            image_size: 64,
            zoom_range: [0.4, 1.0],
            batch_size: 2,
            learning_rate: 3e-3,
            warmup_steps: 20,
            min_lr_ratio: 0.1,
            max_grad_norm: 1.0,
            steps: 2000,
            seed: 0,
            loss_weights: LossWeights::default(),
            reference_dropout: 0.1,
            model: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// A zero learning rate is accepted so that null updates can be checked;
    /// negative or non-finite rates are not.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.phase != 1 && self.phase != 2 {
            return bad("phase must be 1 or 2");
        }
        let [lo, hi] = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("zoom_range must satisfy 0 < min <= max <= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("min_lr_ratio must lie in [0, 1]");
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be finite and non-negative");
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.reference_dropout) {
            return bad("reference_dropout must lie in [0, 1]");
        }
        if !(self.loss_weights.flow.is_finite() && self.loss_weights.illum.is_finite())
            || self.loss_weights.flow < 0.0
            || self.loss_weights.illum < 0.0
        {
            return bad("loss weights must be finite and non-negative");
        }
        if self.model.views != self.views || self.model.image_size != self.image_size {
            return bad("model.views and model.image_size must match views and image_size");
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub flow_loss: f64,
    pub illum_loss: f64,
    pub total: f64,
}

pub fn write_loss_csv(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,flow_loss,illum_loss,total")?;
    for r in log {
        writeln!(f, "{},{},{},{}", r.step, r.flow_loss, r.illum_loss, r.total)?;
    }
    f.flush()?;
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: DenoiserParams,
    v: DenoiserParams,
    t: u64,
}

impl Adam {
    pub fn new(cfg: &DenoiserConfig) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: DenoiserParams::zeros(cfg),
            v: DenoiserParams::zeros(cfg),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut DenoiserParams, grad: &DenoiserParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ps = params.tensors_mut();
        let gs = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            let (p, g, m, v) = (p.1.data_mut(), g.1.data(), m.1.data_mut(), v.1.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm` (0 = no-op);
/// returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut DenoiserParams, max_norm: f64) -> f64 {
    let norm = grad
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grad.tensors_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Mean squared difference over covered pixels of two sets of per-view
/// albedo images in [0, 1].
pub fn illumination_invariance_loss(a: &[Image], b: &[Image], masks: &[Mask]) -> Result<f64> {
    if a.len() != b.len() || a.len() != masks.len() {
        return Err(Error::ShapeMismatch("view counts differ".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), m) in a.iter().zip(b).zip(masks) {
        if !x.same_shape(y) || x.width != m.width || x.height != m.height {
            return Err(Error::ShapeMismatch("albedo views and masks differ in size".into()));
        }
        for (i, &covered) in m.data.iter().enumerate() {
            if covered {
                for c in 0..x.channels {
                    let d = (x.data[i * x.channels + c] - y.data[i * y.channels + c]) as f64;
                    sum += d * d;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// One training example: conditioning for two lights of the same asset and
/// crop, clean targets, and the token-space weights of covered albedo values.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub cond_a: Conditioning,
    pub cond_b: Conditioning,
    pub targets: Vec<Tensor>,
    /// 1 for albedo token entries whose pixel is covered, else 0.
    pub albedo_mask: Tensor,
}

/// Per-view crop windows plus the reference window.
#[derive(Debug, Clone, PartialEq)]
pub struct Crops {
    pub views: Vec<CropWindow>,
    pub reference: CropWindow,
}

impl Crops {
    pub fn full(views: usize, size: usize) -> Crops {
        Crops {
            views: vec![CropWindow::full(size); views],
            reference: CropWindow::full(size),
        }
    }

    /// Same crop size `round(f · size)` for every image, independent origins.
    pub fn random(views: usize, size: usize, fraction: f64, rng: &mut impl Rng) -> Crops {
        let side = ((fraction * size as f64).round() as usize).clamp(1, size);
        let mut window = || CropWindow {
            x0: rng.gen_range(0..=size - side),
            y0: rng.gen_range(0..=size - side),
            size: side,
        };
        let views = (0..views).map(|_| window()).collect();
        Crops {
            views,
            reference: window(),
        }
    }
}

pub fn crop_resample(img: &Image, window: CropWindow, size: usize) -> Image {
    img.crop(window).resample(size)
}

pub fn prepare_example(
    cfg: &DenoiserConfig,
    asset: &Asset,
    lights: (usize, usize),
    crops: &Crops,
    drop_reference: bool,
) -> Result<Example> {
    let s = cfg.image_size;
    let geo: Vec<ViewGeometry> = asset
        .gbuffers
        .iter()
        .zip(&asset.cameras)
        .zip(&crops.views)
        .map(|((g, c), &w)| ViewGeometry {
            gbuffer: g,
            camera: c,
            window: w,
        })
        .collect();
    let reference = |l: usize| crop_resample(&asset.references[l], crops.reference, s);
    let (ra, rb) = (reference(lights.0), reference(lights.1));
    let mut cond_a = Conditioning::build(cfg, &geo, (!drop_reference).then_some(&ra))?;
    let mut cond_b = cond_a.clone();
    if !drop_reference {
        cond_b.reference = Some(crate::denoiser::cond::reference_tokens(cfg, &rb)?);
    } else {
        cond_a.reference = None;
    }
    let albedo: Vec<Image> = asset
        .albedo
        .iter()
        .zip(&crops.views)
        .map(|(i, &w)| crop_resample(i, w, s))
        .collect();
    let mr: Vec<Image> = asset
        .mr
        .iter()
        .zip(&crops.views)
        .map(|(i, &w)| crop_resample(i, w, s))
        .collect();
    let mut targets = material_tokens(cfg, &albedo, &mr)?;
    if cfg.normal_channel {
        let normals: Vec<Tensor> = asset
            .gbuffers
            .iter()
            .zip(&crops.views)
            .map(|(g, &w)| patchify(&crop_resample(&g.normal, w, s), cfg.patch, &[0, 1, 2]))
            .collect();
        targets.push(Tensor::vstack(&normals.iter().collect::<Vec<_>>())?);
    }
    let mask_tokens: Vec<Tensor> = cond_a
        .masks
        .iter()
        .map(|m| patchify(&m.to_image(), cfg.patch, &[0, 0, 0]).map(|v| (v + 1.0) * 0.5))
        .collect();
    Ok(Example {
        albedo_mask: Tensor::vstack(&mask_tokens.iter().collect::<Vec<_>>())?,
        cond_a,
        cond_b,
        targets,
    })
}

/// Loss parts of one example and the gradient of
/// `w.flow · flow + w.illum · illum` with respect to both velocity predictions.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub flow: f64,
    pub illum: f64,
    pub dv_a: Vec<Tensor>,
    pub dv_b: Vec<Tensor>,
}

/// Flow loss: per-branch mean squared velocity error summed over branches and
/// averaged over the two lighting passes. Illumination loss: mean squared
/// difference of the one-step albedo estimates `(x_t − t·v + 1)/2` over
/// covered entries.
pub fn example_loss(
    v_a: &[Tensor],
    v_b: &[Tensor],
    target_v: &[Tensor],
    t: f64,
    albedo_mask: &Tensor,
    w: LossWeights,
) -> Result<ExampleLoss> {
    let mut flow = 0.0;
    let (mut dv_a, mut dv_b) = (Vec::new(), Vec::new());
    for ((a, b), y) in v_a.iter().zip(v_b).zip(target_v) {
        let n = y.len() as f64;
        let ea = a.sub(y)?;
        let eb = b.sub(y)?;
        flow += 0.5 * (ea.sq_norm() + eb.sq_norm()) / n;
        dv_a.push(ea.scale(w.flow / n));
        dv_b.push(eb.scale(w.flow / n));
    }
    let count: f64 = albedo_mask.data().iter().sum();
    let mut illum = 0.0;
    if count > 0.0 {
        let mut diff = v_a[0].sub(&v_b[0])?.scale(-0.5 * t);
        for (d, m) in diff.data_mut().iter_mut().zip(albedo_mask.data()) {
            *d *= m;
        }
        illum = diff.sq_norm() / count;
        // d illum / d v_a = 2·diff·(−t/2) / count
        let g = diff.scale(-t * w.illum / count);
        dv_a[0].add_assign(&g);
        dv_b[0].axpy(-1.0, &g);
    }
    Ok(ExampleLoss {
        flow,
        illum,
        dv_a,
        dv_b,
    })
}

/// Stateful training loop shared by both phases.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Denoiser,
    pub adam: Adam,
    pub step: usize,
    data_rng: ChaCha8Rng,
    crop_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Logit-normal time draw.
fn sample_t(rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    1.0 / (1.0 + (-z).exp())
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: Denoiser) -> Result<Trainer> {
        cfg.validate()?;
        if model.config != cfg.model {
            return Err(Error::InvalidConfig(
                "initial model does not match the configured architecture".into(),
            ));
        }
        let adam = Adam::new(&model.config);
        Ok(Trainer {
            data_rng: stream(cfg.seed, 1),
            crop_rng: stream(cfg.seed, 2),
            noise_rng: stream(cfg.seed, 3),
            cfg,
            model,
            adam,
            step: 0,
        })
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.assets.is_empty() || data.spec.views != self.cfg.views {
            return Err(Error::InvalidConfig(
                "dataset views differ from the training config".into(),
            ));
        }
        Ok(())
    }

    /// Draws the next batch's examples (asset, lights, crops, dropout).
    pub fn next_examples(&mut self, data: &Dataset) -> Result<Vec<Example>> {
        self.check_data(data)?;
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let asset = &data.assets[self.data_rng.gen_range(0..data.assets.len())];
            let n_lights = asset.references.len();
            let la = self.data_rng.gen_range(0..n_lights);
            let lb = (la + self.data_rng.gen_range(1..n_lights.max(2))) % n_lights;
            let drop = self.data_rng.gen::<f64>() < self.cfg.reference_dropout;
            let size = data.spec.source_size;
            let crops = if self.cfg.phase == 2 {
                let [lo, hi] = self.cfg.zoom_range;
                let f = if lo == hi { lo } else { self.crop_rng.gen_range(lo..=hi) };
                Crops::random(self.cfg.views, size, f, &mut self.crop_rng)
            } else {
                Crops::full(self.cfg.views, size)
            };
            out.push(prepare_example(&self.model.config, asset, (la, lb), &crops, drop)?);
        }
        Ok(out)
    }

    /// Loss and accumulated gradient of a batch at fresh `(t, noise)` draws.
    pub fn batch_gradient(&mut self, examples: &[Example]) -> Result<(LossRecord, DenoiserParams)> {
        let w = self.cfg.loss_weights;
        let mut grad = DenoiserParams::zeros(&self.model.config);
        let (mut flow, mut illum) = (0.0, 0.0);
        let scale = 1.0 / examples.len() as f64;
        let diverged = Error::DivergedLoss { step: self.step };
        for ex in examples {
            let t = sample_t(&mut self.noise_rng);
            let noise: Vec<Tensor> = ex
                .targets
                .iter()
                .map(|x| randn(x.shape(), 1.0, &mut self.noise_rng))
                .collect();
            let x_t = ex
                .targets
                .iter()
                .zip(&noise)
                .map(|(x0, n)| flow_interpolate(x0, n, t))
                .collect::<Result<Vec<_>>>()?;
            let target_v = noise
                .iter()
                .zip(&ex.targets)
                .map(|(n, x0)| n.sub(x0))
                .collect::<Result<Vec<_>>>()?;
            let fwd = |cond: &Conditioning| match self.model.forward_train(&x_t, t, cond) {
                // Training inputs are finite, so any non-finite value came from the parameters.
                Err(Error::NonFiniteActivation(_) | Error::NonFiniteInput) => Err(diverged.clone()),
                r => r,
            };
            let (v_a, cache_a) = fwd(&ex.cond_a)?;
            let same = ex.cond_a == ex.cond_b;
            let (v_b, cache_b) = if same {
                (v_a.clone(), None)
            } else {
                let (v, c) = fwd(&ex.cond_b)?;
                (v, Some(c))
            };
            let l = example_loss(&v_a, &v_b, &target_v, t, &ex.albedo_mask, w)?;
            flow += scale * l.flow;
            illum += scale * l.illum;
            let weigh = |d: Vec<Tensor>| -> Vec<Tensor> { d.into_iter().map(|x| x.scale(scale)).collect() };
            let (da, db) = (weigh(l.dv_a), weigh(l.dv_b));
            match cache_b {
                Some(cb) => {
                    self.model.backward(&ex.cond_a, &cache_a, &da, &mut grad)?;
                    self.model.backward(&ex.cond_b, &cb, &db, &mut grad)?;
                }
                None => {
                    let both: Vec<Tensor> = da.iter().zip(&db).map(|(a, b)| a.add(b)).collect::<Result<_>>()?;
                    self.model.backward(&ex.cond_a, &cache_a, &both, &mut grad)?;
                }
            }
        }
        let total = w.flow * flow + w.illum * illum;
        if !total.is_finite() {
            return Err(diverged);
        }
        Ok((
            LossRecord {
                step: self.step,
                flow_loss: flow,
                illum_loss: illum,
                total,
            },
            grad,
        ))
    }

    pub fn learning_rate(&self) -> f64 {
        let c = &self.cfg;
        if self.step < c.warmup_steps {
            return c.learning_rate * (self.step + 1) as f64 / c.warmup_steps as f64;
        }
        let span = c.steps.saturating_sub(c.warmup_steps + 1).max(1);
        let progress = ((self.step - c.warmup_steps) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        c.learning_rate * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * cosine)
    }

    /// One optimizer step; returns the pre-update loss.
    pub fn train_step(&mut self, data: &Dataset) -> Result<LossRecord> {
        let examples = self.next_examples(data)?;
        let (record, mut grad) = self.batch_gradient(&examples)?;
        if grad.tensors().iter().any(|(_, g)| !g.is_finite()) {
            return Err(Error::DivergedLoss { step: self.step });
        }
        clip_grad_norm(&mut grad, self.cfg.max_grad_norm);
        let lr = self.learning_rate();
        self.adam.step(&mut self.model.params, &grad, lr);
        self.model.trained_steps += 1;
        self.step += 1;
        Ok(record)
    }

    /// Runs the configured number of steps, calling `on_step` after each.
    pub fn run(&mut self, data: &Dataset, on_step: &mut dyn FnMut(&LossRecord, &Denoiser)) -> Result<Vec<LossRecord>> {
        let mut log = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let r = self.train_step(data)?;
            on_step(&r, &self.model);
            log.push(r);
        }
        Ok(log)
    }
}

pub struct TrainOutcome {
    pub model: Denoiser,
    pub log: Vec<LossRecord>,
}

pub fn train_phase1(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    if cfg.phase != 1 {
        return Err(Error::InvalidConfig("train_phase1 needs phase = 1".into()));
    }
    let mut rng = stream(cfg.seed, 0);
    let model = Denoiser::new(cfg.model.clone(), &mut rng)?;
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    let log = trainer.run(data, &mut |_, _| {})?;
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}

pub fn train_phase2_zoomin(cfg: &TrainConfig, data: &Dataset, init: Denoiser) -> Result<TrainOutcome> {
    if cfg.phase != 2 {
        return Err(Error::InvalidConfig("train_phase2_zoomin needs phase = 2".into()));
    }
    let mut trainer = Trainer::new(cfg.clone(), init)?;
    let log = trainer.run(data, &mut |_, _| {})?;
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}
