use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::params::{ParamId, Params};
use super::{ForwardCtx, SequenceModel};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            d_ff: 512,
            heads: 8,
            layers: 2,
            dropout: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    /// Fused query/key/value projection `d_model -> 3 * d_model`.
    pub qkv: Linear,
    pub out: Linear,
    pub norm1: (ParamId, ParamId),
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: (ParamId, ParamId),
}

/// Encoder-only transformer (post-norm) with fixed sinusoidal positions and
/// full, non-causal self-attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEncoder {
    pub input: usize,
    pub d_model: usize,
    pub heads: usize,
    pub dropout: f64,
    pub embed: Linear,
    pub layers: Vec<EncoderLayer>,
    pub readout: Linear,
}

/// `pe[t][2i] = sin(t / 10000^(2i/d))`, `pe[t][2i+1] = cos(...)`.
pub fn positional_encoding(len: usize, d_model: usize) -> Matrix {
    Matrix::from_fn(len, d_model, |t, j| {
        let i = (j / 2) as f64;
        let angle = t as f64 / libm::pow(10000.0, 2.0 * i / d_model as f64);
        if j % 2 == 0 {
            libm::sin(angle)
        } else {
            libm::cos(angle)
        }
    })
}

pub fn build_attention_encoder<R: Rng + ?Sized>(
    cfg: &AttentionConfig,
    input: usize,
    output: usize,
    params: &mut Params,
    rng: &mut R,
) -> Result<AttentionEncoder> {
    if cfg.layers == 0 || cfg.heads == 0 || cfg.d_model == 0 || cfg.d_ff == 0 || input == 0 || output == 0 {
        return Err(Error::Config(format!(
            "attention encoder needs positive sizes, got layers={} heads={} d_model={} d_ff={}",
            cfg.layers, cfg.heads, cfg.d_model, cfg.d_ff
        )));
    }
    if !cfg.d_model.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "model dimension {} not divisible by {} heads",
            cfg.d_model, cfg.heads
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    let d = cfg.d_model;
    let embed = Linear::new(params, "attn.embed", input, d, rng);
    let layers = (0..cfg.layers)
        .map(|l| {
            let norm = |params: &mut Params, n: &str| {
                (
                    params.add(format!("attn.{l}.{n}.gamma"), Matrix::filled(1, d, 1.0)),
                    params.add(format!("attn.{l}.{n}.beta"), Matrix::zeros(1, d)),
                )
            };
            let qkv = Linear::new(params, &format!("attn.{l}.qkv"), d, 3 * d, rng);
            let out = Linear::new(params, &format!("attn.{l}.out"), d, d, rng);
            let norm1 = norm(params, "norm1");
            let ff1 = Linear::new(params, &format!("attn.{l}.ff1"), d, cfg.d_ff, rng);
            let ff2 = Linear::new(params, &format!("attn.{l}.ff2"), cfg.d_ff, d, rng);
            let norm2 = norm(params, "norm2");
            EncoderLayer {
                qkv,
                out,
                norm1,
                ff1,
                ff2,
                norm2,
            }
        })
        .collect();
    let readout = Linear::new(params, "attn.readout", d, output, rng);
    Ok(AttentionEncoder {
        input,
        d_model: d,
        heads: cfg.heads,
        dropout: cfg.dropout,
        embed,
        layers,
        readout,
    })
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl SequenceModel for AttentionEncoder {
    fn input_width(&self) -> usize {
        self.input
    }

    fn output_width(&self) -> usize {
        self.readout.output
    }

    fn forward(&self, g: &mut Graph, params: &Params, x: Var, ctx: &mut ForwardCtx<'_>) -> Var {
        let (b, len, d) = (ctx.batch, ctx.len, self.d_model);
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);

        let pe = positional_encoding(len, d);
        let mut pe_all = Matrix::zeros(b * len, d);
        for i in 0..b {
            for t in 0..len {
                pe_all.row_mut(i * len + t).copy_from_slice(pe.row(t));
            }
        }
        let h = self.embed.forward(g, params, x);
        let pe_v = g.constant(pe_all);
        let h = g.add(h, pe_v);
        let mut h = ctx.dropout(g, h, self.dropout);

        for layer in &self.layers {
            let qkv = layer.qkv.forward(g, params, h);
            let mut heads = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let q = g.slice_cols(qkv, head * dh, dh);
                let k = g.slice_cols(qkv, d + head * dh, dh);
                let v = g.slice_cols(qkv, 2 * d + head * dh, dh);
                let scores = g.block_matmul_nt(q, k, len);
                let scores = g.scale(scores, scale);
                let attn = g.row_softmax(scores);
                let attn = ctx.dropout(g, attn, self.dropout);
                heads.push(g.block_matmul(attn, v, len));
            }
            let merged = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)
            };
            let a = layer.out.forward(g, params, merged);
            let a = ctx.dropout(g, a, self.dropout);
            let sum = g.add(h, a);
            let (g1, b1) = (params.leaf(g, layer.norm1.0), params.leaf(g, layer.norm1.1));
            h = g.layer_norm(sum, g1, b1, LAYER_NORM_EPS);

            let f = layer.ff1.forward(g, params, h);
            let f = g.relu(f);
            let f = ctx.dropout(g, f, self.dropout);
            let f = layer.ff2.forward(g, params, f);
            let f = ctx.dropout(g, f, self.dropout);
            let sum = g.add(h, f);
            let (g2, b2) = (params.leaf(g, layer.norm2.0), params.leaf(g, layer.norm2.1));
            h = g.layer_norm(sum, g2, b2, LAYER_NORM_EPS);
        }
        self.readout.forward(g, params, h)
    }
}
