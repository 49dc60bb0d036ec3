//! Minimal f64 tensor toolkit with hand-written gradients: matrix products,
//! softmax, RMS norm, SiLU, 3-axis rotary embedding, attention and the
//! learnable per-channel embedding tables.

pub mod checkpoint;
pub mod ops;
pub mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use ops::{
    attention, attention_backward, attention_weights, attention_weights_backward, attention_with_weights, rmsnorm,
    rmsnorm_backward, rope_3d, rope_3d_partial, rope_3d_partial_backward, silu, silu_backward, softmax_rows,
    softmax_rows_backward, Linear,
};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};

use crate::error::{Error, Result};

/// Tokens per channel-embedding table.
pub const EMBEDDING_TOKENS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Albedo,
    Mr,
    Normal,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Albedo, Channel::Mr, Channel::Normal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Albedo => "albedo",
            Channel::Mr => "mr",
            Channel::Normal => "normal",
        }
    }

    /// Values per pixel carried by the branch.
    pub fn pixel_channels(self) -> usize {
        match self {
            Channel::Mr => 2,
            _ => 3,
        }
    }
}

/// Fills a tensor with N(0, std²) samples.
pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("consistent shape")
}

/// Learnable token table identifying one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEmbedding {
    pub channel: Channel,
    pub table: Tensor,
}

impl ChannelEmbedding {
    pub fn random(channel: Channel, width: usize, rng: &mut impl Rng) -> ChannelEmbedding {
        ChannelEmbedding {
            channel,
            table: randn(&[EMBEDDING_TOKENS, width], 1.0, rng),
        }
    }
}

/// Projections of one attention unit. `w_v` and `w_out` hold one matrix per
/// active channel in [`Channel::ALL`] order; `w_out` is empty when the unit
/// has no output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Vec<Tensor>,
    pub w_out: Vec<Tensor>,
}

impl AttentionParams {
    pub fn zeros(width: usize, channels: usize, with_out: bool) -> AttentionParams {
        let sq = || Tensor::zeros(&[width, width]);
        AttentionParams {
            w_q: sq(),
            w_k: sq(),
            w_v: (0..channels).map(|_| sq()).collect(),
            w_out: if with_out {
                (0..channels).map(|_| sq()).collect()
            } else {
                Vec::new()
            },
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.cols()
    }

    pub fn w_v_for(&self, channel: Channel) -> Result<&Tensor> {
        self.w_v
            .get(channel.index())
            .ok_or_else(|| Error::ShapeMismatch(format!("no value projection for {}", channel.name())))
    }

    pub fn w_v_albedo(&self) -> &Tensor {
        &self.w_v[0]
    }

    pub fn w_v_mr(&self) -> &Tensor {
        &self.w_v[1]
    }

    pub fn w_out_albedo(&self) -> &Tensor {
        &self.w_out[0]
    }

    pub fn w_out_mr(&self) -> &Tensor {
        &self.w_out[1]
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("w_q".to_string(), &self.w_q), ("w_k".to_string(), &self.w_k)];
        for (c, t) in Channel::ALL.iter().zip(&self.w_v) {
            out.push((format!("w_v_{}", c.name()), t));
        }
        for (c, t) in Channel::ALL.iter().zip(&self.w_out) {
            out.push((format!("w_out_{}", c.name()), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("w_q".to_string(), &mut self.w_q), ("w_k".to_string(), &mut self.w_k)];
        for (c, t) in Channel::ALL.iter().zip(self.w_v.iter_mut()) {
            out.push((format!("w_v_{}", c.name()), t));
        }
        for (c, t) in Channel::ALL.iter().zip(self.w_out.iter_mut()) {
            out.push((format!("w_out_{}", c.name()), t));
        }
        out
    }
}

/// Intermediate values of [`inject_channel_embedding`] needed for its gradient.
#[derive(Debug, Clone)]
pub struct InjectCache {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub weights: Tensor,
}

/// `hidden + attention(hidden·w_q, E·w_k, E·w_v_c, width)` for the
/// embedding's channel `c`.
pub fn inject_channel_embedding(
    hidden: &Tensor,
    embedding: &ChannelEmbedding,
    params: &AttentionParams,
) -> Result<Tensor> {
    Ok(inject_forward(hidden, embedding, params)?.0)
}

pub fn inject_forward(
    hidden: &Tensor,
    embedding: &ChannelEmbedding,
    params: &AttentionParams,
) -> Result<(Tensor, InjectCache)> {
    let q = matmul(hidden, &params.w_q)?;
    let k = matmul(&embedding.table, &params.w_k)?;
    let v = matmul(&embedding.table, params.w_v_for(embedding.channel)?)?;
    let (delta, weights) = attention_with_weights(&q, &k, &v, params.width())?;
    Ok((hidden.add(&delta)?, InjectCache { q, k, v, weights }))
}

/// Backward of [`inject_forward`]: accumulates into `grad` and the embedding
/// gradient, returning `∂L/∂hidden`.
pub fn inject_backward(
    hidden: &Tensor,
    embedding: &ChannelEmbedding,
    params: &AttentionParams,
    cache: &InjectCache,
    dout: &Tensor,
    grad: &mut AttentionParams,
    grad_table: &mut Tensor,
) -> Result<Tensor> {
    let c = embedding.channel.index();
    let (dq, dk, dv) = attention_backward(&cache.q, &cache.k, &cache.v, &cache.weights, dout, params.width())?;
    grad.w_q.add_assign(&matmul_tn(hidden, &dq)?);
    grad.w_k.add_assign(&matmul_tn(&embedding.table, &dk)?);
    grad.w_v[c].add_assign(&matmul_tn(&embedding.table, &dv)?);
    grad_table.add_assign(&matmul_nt(&dk, &params.w_k)?);
    grad_table.add_assign(&matmul_nt(&dv, &params.w_v[c])?);
    let mut dh = dout.clone();
    dh.add_assign(&matmul_nt(&dq, &params.w_q)?);
    Ok(dh)
}
