use super::attention::{reference_backward, reference_forward, MaskEvent, ReferenceCache};
use super::cond::Conditioning;
use super::config::DenoiserConfig;
use super::params::{DenoiserParams, GEOMETRY_CHANNELS, REFERENCE_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{
    attention_backward, attention_with_weights, inject_backward, inject_forward, matmul, matmul_nt, matmul_tn, rmsnorm,
    rmsnorm_backward, rope_3d_partial, rope_3d_partial_backward, silu, silu_backward, InjectCache, Tensor,
};

/// Lower clamp on `t` inside the `1/t` output feature.
pub const MIN_T_FEATURE: f64 = 0.05;

/// `(1, t, 1/max(t, 0.05))`, the basis of the output skip coefficients.
pub fn output_basis(t: f64) -> [f64; 3] {
    [1.0, t, 1.0 / t.max(MIN_T_FEATURE)]
}

/// Sin/cos features at octave-spaced frequencies starting from 0.5.
pub fn time_features(t: f64, frequencies: usize) -> Tensor {
    let mut f = Vec::with_capacity(2 * frequencies);
    for k in 0..frequencies {
        let w = std::f64::consts::TAU * 0.5 * 2f64.powi(k as i32) * t;
        f.push(w.sin());
        f.push(w.cos());
    }
    Tensor::new(&[1, 2 * frequencies], f).expect("time layout")
}

#[derive(Debug, Clone)]
struct SelfAttnCache {
    x: Tensor,
    u: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    p: Tensor,
    av: Tensor,
}

#[derive(Debug, Clone)]
struct BlockCache {
    attn: Option<SelfAttnCache>,
    inject_in: Vec<Tensor>,
    inject: Vec<InjectCache>,
    reference_in_albedo: Tensor,
    reference: ReferenceCache,
    ffn_in: Vec<Tensor>,
    ffn_norm: Vec<Tensor>,
    ffn_pre: Vec<Tensor>,
    ffn_act: Vec<Tensor>,
}

/// Activations kept by a training forward pass for [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    state: Vec<Tensor>,
    basis: [f64; 3],
    time_in: Tensor,
    ref_tokens: Tensor,
    coords: Tensor,
    blocks: Vec<BlockCache>,
    head_in: Vec<Tensor>,
    head_norm: Vec<Tensor>,
    head_out: Vec<Tensor>,
}

/// The two-branch (optionally three-branch) multi-view velocity network.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: DenoiserParams,
    /// Optimizer steps applied so far; sampling refuses a model at zero.
    pub trained_steps: u64,
}

type Observer<'a> = Option<&'a mut dyn FnMut(usize, MaskEvent)>;

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut impl rand::Rng) -> Result<Denoiser> {
        config.validate()?;
        let params = DenoiserParams::init(&config, rng);
        Ok(Denoiser {
            config,
            params,
            trained_steps: 0,
        })
    }

    pub fn zeros(config: DenoiserConfig) -> Result<Denoiser> {
        config.validate()?;
        let params = DenoiserParams::zeros(&config);
        Ok(Denoiser {
            config,
            params,
            trained_steps: 0,
        })
    }

    /// The same weights run at another view resolution. No parameter depends
    /// on the token count, so only the patch grid (and with it the RoPE
    /// coordinate spacing) changes.
    pub fn at_resolution(&self, image_size: usize) -> Result<Denoiser> {
        let config = DenoiserConfig {
            image_size,
            ..self.config.clone()
        };
        config.validate()?;
        Ok(Denoiser {
            config,
            params: self.params.clone(),
            trained_steps: self.trained_steps,
        })
    }

    fn check_inputs(&self, state: &[Tensor], t: f64, cond: &Conditioning) -> Result<()> {
        let cfg = &self.config;
        let n = cfg.tokens();
        let channels = cfg.channels();
        if state.len() != channels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} state branches, expected {}",
                state.len(),
                channels.len()
            )));
        }
        for (s, c) in state.iter().zip(&channels) {
            if s.shape() != [n, cfg.patch_dim(c.pixel_channels())] {
                return Err(Error::ShapeMismatch(format!(
                    "{} state has shape {:?}",
                    c.name(),
                    s.shape()
                )));
            }
        }
        if cond.geometry.shape() != [n, cfg.patch_dim(GEOMETRY_CHANNELS)] || cond.coords.shape() != [n, 3] {
            return Err(Error::ShapeMismatch("conditioning does not match the model".into()));
        }
        if let Some(r) = &cond.reference {
            if r.shape() != [cfg.tokens_per_view(), cfg.patch_dim(REFERENCE_CHANNELS)] {
                return Err(Error::ShapeMismatch(format!("reference tokens {:?}", r.shape())));
            }
        }
        if !t.is_finite() || !state.iter().all(Tensor::is_finite) || !cond.geometry.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Predicted velocity per branch.
    pub fn velocity(&self, state: &[Tensor], t: f64, cond: &Conditioning) -> Result<Vec<Tensor>> {
        Ok(self.run(state, t, cond, None, false)?.0)
    }

    /// As [`Denoiser::velocity`], reporting every shared-mask event with its
    /// block index.
    pub fn velocity_observed(
        &self,
        state: &[Tensor],
        t: f64,
        cond: &Conditioning,
        observer: &mut dyn FnMut(usize, MaskEvent),
    ) -> Result<Vec<Tensor>> {
        Ok(self.run(state, t, cond, Some(observer), false)?.0)
    }

    pub fn forward_train(&self, state: &[Tensor], t: f64, cond: &Conditioning) -> Result<(Vec<Tensor>, ForwardCache)> {
        let (v, cache) = self.run(state, t, cond, None, true)?;
        Ok((v, cache.expect("cache requested")))
    }

    fn run(
        &self,
        state: &[Tensor],
        t: f64,
        cond: &Conditioning,
        mut observer: Observer,
        keep: bool,
    ) -> Result<(Vec<Tensor>, Option<ForwardCache>)> {
        self.check_inputs(state, t, cond)?;
        let cfg = &self.config;
        let p = &self.params;
        let channels = cfg.channels();
        let nb = channels.len();
        let n = cfg.tokens();
        let d = cfg.width;

        let time_in = time_features(t, cfg.time_frequencies);
        let time_emb = p.time.forward(&time_in)?;
        let geom = p.geometry.forward(&cond.geometry)?;
        let ref_tokens = match &cond.reference {
            Some(r) => p.reference.forward(r)?,
            None => Tensor::zeros(&[cfg.tokens_per_view(), d]),
        };

        let mut h: Vec<Tensor> = Vec::with_capacity(nb);
        for (b, s) in state.iter().enumerate() {
            let mut x = p.input[b].forward(s)?;
            x.add_assign(&geom);
            x.add_row(time_emb.data());
            h.push(x);
        }
        let scaled = cond.coords.scale(cfg.rope_scale);
        let parts: Vec<&Tensor> = (0..nb).map(|_| &scaled).collect();
        let coords = Tensor::vstack(&parts)?;

        let mut blocks = Vec::new();
        for (k, blk) in p.blocks.iter().enumerate() {
            let attn = if cfg.self_attention {
                let x = Tensor::vstack(&h.iter().collect::<Vec<_>>())?;
                let u = rmsnorm(&x);
                let mut q = matmul(&u, &blk.attn_q)?;
                let mut kk = matmul(&u, &blk.attn_k)?;
                let v = matmul(&u, &blk.attn_v)?;
                if cfg.rope {
                    q = rope_3d_partial(&q, &coords, cfg.rotary_dims)?;
                    kk = rope_3d_partial(&kk, &coords, cfg.rotary_dims)?;
                }
                let (av, pw) = attention_with_weights(&q, &kk, &v, d)?;
                let mut out = x.clone();
                out.add_assign(&matmul(&av, &blk.attn_o)?);
                for (b, hb) in h.iter_mut().enumerate() {
                    *hb = out.slice_rows(b * n, (b + 1) * n);
                }
                keep.then_some(SelfAttnCache {
                    x,
                    u,
                    q,
                    k: kk,
                    v,
                    p: pw,
                    av,
                })
            } else {
                None
            };

            let mut inject_in = Vec::new();
            let mut inject = Vec::new();
            for (b, c) in channels.iter().enumerate() {
                let (out, ic) = inject_forward(&h[b], &p.embeddings[c.index()], &blk.inject)?;
                if keep {
                    inject_in.push(std::mem::replace(&mut h[b], out));
                    inject.push(ic);
                } else {
                    h[b] = out;
                }
            }

            let refs: Vec<&Tensor> = h.iter().collect();
            let (out, rc) = match observer.as_mut() {
                Some(f) => {
                    let mut wrap = |e: MaskEvent| f(k, e);
                    reference_forward(&refs, &ref_tokens, &blk.reference, Some(&mut wrap))?
                }
                None => reference_forward(&refs, &ref_tokens, &blk.reference, None)?,
            };
            let reference_in_albedo = if keep { h[0].clone() } else { Tensor::zeros(&[0]) };
            h = out;

            let (mut ffn_in, mut ffn_norm, mut ffn_pre, mut ffn_act) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for b in 0..nb {
                let norm = rmsnorm(&h[b]);
                let pre = blk.ffn_in[b].forward(&norm)?;
                let act = silu(&pre);
                let delta = blk.ffn_out[b].forward(&act)?;
                let next = h[b].add(&delta)?;
                if keep {
                    ffn_in.push(std::mem::replace(&mut h[b], next));
                    ffn_norm.push(norm);
                    ffn_pre.push(pre);
                    ffn_act.push(act);
                } else {
                    h[b] = next;
                }
            }
            if h.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteActivation(format!("block {k}")));
            }
            if keep {
                blocks.push(BlockCache {
                    attn,
                    inject_in,
                    inject,
                    reference_in_albedo,
                    reference: rc,
                    ffn_in,
                    ffn_norm,
                    ffn_pre,
                    ffn_act,
                });
            }
        }

        let basis = output_basis(t);
        let mut velocity = Vec::with_capacity(nb);
        let (mut head_norm, mut head_out) = (Vec::new(), Vec::new());
        for b in 0..nb {
            let norm = rmsnorm(&h[b]);
            let out = p.head[b].forward(&norm)?;
            let dot = |c: &Tensor| c.data().iter().zip(basis).map(|(a, f)| a * f).sum::<f64>();
            let (ss, sh) = (dot(&p.skip_state[b]), dot(&p.skip_head[b]));
            let mut v = state[b].scale(ss);
            v.axpy(sh, &out);
            if !v.is_finite() {
                return Err(Error::NonFiniteActivation("velocity head".into()));
            }
            velocity.push(v);
            if keep {
                head_norm.push(norm);
                head_out.push(out);
            }
        }
        let cache = keep.then(|| ForwardCache {
            state: state.to_vec(),
            basis,
            time_in,
            ref_tokens,
            coords,
            blocks,
            head_in: h,
            head_norm,
            head_out,
        });
        Ok((velocity, cache))
    }

    /// Accumulates `∂L/∂params` into `grad` given `dv[b] = ∂L/∂velocity_b`.
    pub fn backward(
        &self,
        cond: &Conditioning,
        cache: &ForwardCache,
        dv: &[Tensor],
        grad: &mut DenoiserParams,
    ) -> Result<()> {
        let cfg = &self.config;
        let p = &self.params;
        let channels = cfg.channels();
        let nb = channels.len();
        let n = cfg.tokens();
        let d = cfg.width;

        let mut dh = Vec::with_capacity(nb);
        for b in 0..nb {
            let sh: f64 = p.skip_head[b].data().iter().zip(cache.basis).map(|(a, f)| a * f).sum();
            let dstate: f64 = dv[b].data().iter().zip(cache.state[b].data()).map(|(a, x)| a * x).sum();
            let dout_dot: f64 = dv[b]
                .data()
                .iter()
                .zip(cache.head_out[b].data())
                .map(|(a, x)| a * x)
                .sum();
            for i in 0..3 {
                grad.skip_state[b].data_mut()[i] += cache.basis[i] * dstate;
                grad.skip_head[b].data_mut()[i] += cache.basis[i] * dout_dot;
            }
            let dout = dv[b].scale(sh);
            let dnorm = p.head[b].backward(&cache.head_norm[b], &dout, &mut grad.head[b])?;
            dh.push(rmsnorm_backward(&cache.head_in[b], &cache.head_norm[b], &dnorm));
        }

        let mut dref = Tensor::zeros(cache.ref_tokens.shape());
        for (k, bc) in cache.blocks.iter().enumerate().rev() {
            let blk = &p.blocks[k];
            for b in 0..nb {
                let gb = &mut grad.blocks[k];
                let dact = blk.ffn_out[b].backward(&bc.ffn_act[b], &dh[b], &mut gb.ffn_out[b])?;
                let dpre = silu_backward(&bc.ffn_pre[b], &dact);
                let dnorm = blk.ffn_in[b].backward(&bc.ffn_norm[b], &dpre, &mut gb.ffn_in[b])?;
                dh[b].add_assign(&rmsnorm_backward(&bc.ffn_in[b], &bc.ffn_norm[b], &dnorm));
            }

            let (dz, dr) = reference_backward(
                &bc.reference_in_albedo,
                &cache.ref_tokens,
                &blk.reference,
                &bc.reference,
                &dh,
                &mut grad.blocks[k].reference,
            )?;
            dh = dz;
            dref.add_assign(&dr);

            for (b, c) in channels.iter().enumerate() {
                let e = &p.embeddings[c.index()];
                let (gb, ge) = (&mut grad.blocks[k], &mut grad.embeddings[c.index()]);
                dh[b] = inject_backward(
                    &bc.inject_in[b],
                    e,
                    &blk.inject,
                    &bc.inject[b],
                    &dh[b],
                    &mut gb.inject,
                    &mut ge.table,
                )?;
            }

            if let Some(a) = &bc.attn {
                let gb = &mut grad.blocks[k];
                let mut dx = Tensor::vstack(&dh.iter().collect::<Vec<_>>())?;
                gb.attn_o.add_assign(&matmul_tn(&a.av, &dx)?);
                let dav = matmul_nt(&dx, &blk.attn_o)?;
                let (mut dq, mut dk, dvv) = attention_backward(&a.q, &a.k, &a.v, &a.p, &dav, d)?;
                if cfg.rope {
                    dq = rope_3d_partial_backward(&dq, &cache.coords, cfg.rotary_dims)?;
                    dk = rope_3d_partial_backward(&dk, &cache.coords, cfg.rotary_dims)?;
                }
                gb.attn_q.add_assign(&matmul_tn(&a.u, &dq)?);
                gb.attn_k.add_assign(&matmul_tn(&a.u, &dk)?);
                gb.attn_v.add_assign(&matmul_tn(&a.u, &dvv)?);
                let mut du = matmul_nt(&dq, &blk.attn_q)?;
                du.add_assign(&matmul_nt(&dk, &blk.attn_k)?);
                du.add_assign(&matmul_nt(&dvv, &blk.attn_v)?);
                dx.add_assign(&rmsnorm_backward(&a.x, &a.u, &du));
                for (b, d) in dh.iter_mut().enumerate() {
                    *d = dx.slice_rows(b * n, (b + 1) * n);
                }
            }
        }

        let mut dgeom = Tensor::zeros(&[n, d]);
        for b in 0..nb {
            p.input[b].accumulate(&cache.state[b], &dh[b], &mut grad.input[b])?;
            dgeom.add_assign(&dh[b]);
        }
        let dtime = Tensor::new(&[1, d], dgeom.col_sums())?;
        p.geometry.accumulate(&cond.geometry, &dgeom, &mut grad.geometry)?;
        p.time.accumulate(&cache.time_in, &dtime, &mut grad.time)?;
        if let Some(r) = &cond.reference {
            p.reference.accumulate(r, &dref, &mut grad.reference)?;
        }
        Ok(())
    }
}
