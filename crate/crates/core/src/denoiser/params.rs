use rand::Rng;

use super::config::DenoiserConfig;
use crate::error::{Error, Result};
use crate::nn::{randn, AttentionParams, Channel, ChannelEmbedding, Linear, Tensor, EMBEDDING_TOKENS};

/// Geometry conditioning carries encoded normal and CCM per pixel.
pub const GEOMETRY_CHANNELS: usize = 6;
pub const REFERENCE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_o: Tensor,
    pub inject: AttentionParams,
    pub reference: AttentionParams,
    pub ffn_in: Vec<Linear>,
    pub ffn_out: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub input: Vec<Linear>,
    pub geometry: Linear,
    pub time: Linear,
    pub reference: Linear,
    /// Albedo, MR and normal tables; the normal table is only read when the
    /// normal branch is enabled.
    pub embeddings: Vec<ChannelEmbedding>,
    pub blocks: Vec<BlockParams>,
    pub head: Vec<Linear>,
    /// Coefficients on `(1, t, 1/t)` scaling the noisy state in the output.
    pub skip_state: Vec<Tensor>,
    /// Coefficients on `(1, t, 1/t)` scaling the head output.
    pub skip_head: Vec<Tensor>,
}

impl DenoiserParams {
    pub fn zeros(cfg: &DenoiserConfig) -> DenoiserParams {
        let d = cfg.width;
        let channels = cfg.channels();
        let nb = channels.len();
        let sq = || Tensor::zeros(&[d, d]);
        DenoiserParams {
            input: channels
                .iter()
                .map(|c| Linear::zeros(cfg.patch_dim(c.pixel_channels()), d))
                .collect(),
            geometry: Linear::zeros(cfg.patch_dim(GEOMETRY_CHANNELS), d),
            time: Linear::zeros(cfg.time_features(), d),
            reference: Linear::zeros(cfg.patch_dim(REFERENCE_CHANNELS), d),
            embeddings: Channel::ALL
                .iter()
                .map(|&channel| ChannelEmbedding {
                    channel,
                    table: Tensor::zeros(&[EMBEDDING_TOKENS, d]),
                })
                .collect(),
            blocks: (0..cfg.depth)
                .map(|_| BlockParams {
                    attn_q: sq(),
                    attn_k: sq(),
                    attn_v: sq(),
                    attn_o: sq(),
                    inject: AttentionParams::zeros(d, nb, false),
                    reference: AttentionParams::zeros(d, nb, true),
                    ffn_in: (0..nb).map(|_| Linear::zeros(d, cfg.ffn_mult * d)).collect(),
                    ffn_out: (0..nb).map(|_| Linear::zeros(cfg.ffn_mult * d, d)).collect(),
                })
                .collect(),
            head: channels
                .iter()
                .map(|c| Linear::zeros(d, cfg.patch_dim(c.pixel_channels())))
                .collect(),
            skip_state: (0..nb).map(|_| Tensor::zeros(&[3])).collect(),
            skip_head: (0..nb).map(|_| Tensor::zeros(&[3])).collect(),
        }
    }

    /// Fresh parameters: fan-in scaled projections, `init_std` on residual
    /// outputs, unit-variance embedding tables, and an output layer that starts
    /// as `v = (x_t − head)/t`, i.e. the head predicts the clean sample.
    pub fn init(cfg: &DenoiserConfig, rng: &mut impl Rng) -> DenoiserParams {
        let mut p = DenoiserParams::zeros(cfg);
        let small = cfg.init_std;
        for (name, t) in p.tensors_mut() {
            if name.ends_with(".b") || name.starts_with("skip_") {
                continue;
            }
            let fan_in = t.shape()[0] as f64;
            let std = if name.starts_with("embed.") {
                1.0
            } else if name.ends_with("attn_o")
                || name.contains(".w_out_")
                || name.contains("ffn_out")
                || name.starts_with("head.")
            {
                small
            } else {
                1.0 / fan_in.sqrt()
            };
            *t = randn(t.shape(), std, rng);
        }
        for (s, h) in p.skip_state.iter_mut().zip(p.skip_head.iter_mut()) {
            s.data_mut()[2] = 1.0;
            h.data_mut()[2] = -1.0;
        }
        p
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        fn push_lin<'a>(out: &mut Vec<(String, &'a Tensor)>, name: String, l: &'a Linear) {
            out.push((format!("{name}.w"), &l.w));
            out.push((format!("{name}.b"), &l.b));
        }
        for (i, l) in self.input.iter().enumerate() {
            push_lin(&mut out, format!("input.{}", Channel::ALL[i].name()), l);
        }
        push_lin(&mut out, "geometry".into(), &self.geometry);
        push_lin(&mut out, "time".into(), &self.time);
        push_lin(&mut out, "reference".into(), &self.reference);
        for e in &self.embeddings {
            out.push((format!("embed.{}", e.channel.name()), &e.table));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{k}.attn_q"), &b.attn_q));
            out.push((format!("block{k}.attn_k"), &b.attn_k));
            out.push((format!("block{k}.attn_v"), &b.attn_v));
            out.push((format!("block{k}.attn_o"), &b.attn_o));
            for (n, t) in b.inject.tensors() {
                out.push((format!("block{k}.inject.{n}"), t));
            }
            for (n, t) in b.reference.tensors() {
                out.push((format!("block{k}.reference.{n}"), t));
            }
            for (i, l) in b.ffn_in.iter().enumerate() {
                push_lin(&mut out, format!("block{k}.ffn_in.{}", Channel::ALL[i].name()), l);
            }
            for (i, l) in b.ffn_out.iter().enumerate() {
                push_lin(&mut out, format!("block{k}.ffn_out.{}", Channel::ALL[i].name()), l);
            }
        }
        for (i, l) in self.head.iter().enumerate() {
            push_lin(&mut out, format!("head.{}", Channel::ALL[i].name()), l);
        }
        for (i, t) in self.skip_state.iter().enumerate() {
            out.push((format!("skip_state.{}", Channel::ALL[i].name()), t));
        }
        for (i, t) in self.skip_head.iter().enumerate() {
            out.push((format!("skip_head.{}", Channel::ALL[i].name()), t));
        }
        out
    }

    /// Mutable counterpart of [`DenoiserParams::tensors`], same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        fn push_lin<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: String, l: &'a mut Linear) {
            out.push((format!("{name}.w"), &mut l.w));
            out.push((format!("{name}.b"), &mut l.b));
        }
        let mut out = Vec::new();
        for (i, l) in self.input.iter_mut().enumerate() {
            push_lin(&mut out, format!("input.{}", Channel::ALL[i].name()), l);
        }
        push_lin(&mut out, "geometry".into(), &mut self.geometry);
        push_lin(&mut out, "time".into(), &mut self.time);
        push_lin(&mut out, "reference".into(), &mut self.reference);
        for e in self.embeddings.iter_mut() {
            out.push((format!("embed.{}", e.channel.name()), &mut e.table));
        }
        for (k, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{k}.attn_q"), &mut b.attn_q));
            out.push((format!("block{k}.attn_k"), &mut b.attn_k));
            out.push((format!("block{k}.attn_v"), &mut b.attn_v));
            out.push((format!("block{k}.attn_o"), &mut b.attn_o));
            for (n, t) in b.inject.tensors_mut() {
                out.push((format!("block{k}.inject.{n}"), t));
            }
            for (n, t) in b.reference.tensors_mut() {
                out.push((format!("block{k}.reference.{n}"), t));
            }
            for (i, l) in b.ffn_in.iter_mut().enumerate() {
                push_lin(&mut out, format!("block{k}.ffn_in.{}", Channel::ALL[i].name()), l);
            }
            for (i, l) in b.ffn_out.iter_mut().enumerate() {
                push_lin(&mut out, format!("block{k}.ffn_out.{}", Channel::ALL[i].name()), l);
            }
        }
        for (i, l) in self.head.iter_mut().enumerate() {
            push_lin(&mut out, format!("head.{}", Channel::ALL[i].name()), l);
        }
        for (i, t) in self.skip_state.iter_mut().enumerate() {
            out.push((format!("skip_state.{}", Channel::ALL[i].name()), t));
        }
        for (i, t) in self.skip_head.iter_mut().enumerate() {
            out.push((format!("skip_head.{}", Channel::ALL[i].name()), t));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces every tensor by name; names and shapes must match exactly.
    pub fn load_named(&mut self, mut named: Vec<(String, Tensor)>) -> Result<()> {
        let slots = self.tensors_mut();
        if slots.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                named.len()
            )));
        }
        for ((name, slot), (got_name, got)) in slots.into_iter().zip(named.drain(..)) {
            if name != got_name || slot.shape() != got.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {got_name} {:?} where {name} {:?} was expected",
                    got.shape(),
                    slot.shape()
                )));
            }
            *slot = got;
        }
        Ok(())
    }
}
