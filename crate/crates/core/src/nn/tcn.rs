use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::params::{ParamId, Params};
use super::{ForwardCtx, SequenceModel};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConvConfig {
    pub layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub dropout: f64,
}

impl Default for TemporalConvConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            channels: 50,
            kernel_size: 3,
            dropout: 0.2,
        }
    }
}

/// Steps of history visible to one output: `1 + (kernel - 1) * sum(dilations)`.
pub fn receptive_field(kernel_size: usize, layers: usize) -> usize {
    1 + (kernel_size - 1) * (0..layers).map(|i| 1usize << i).sum::<usize>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub dilation: usize,
    /// `(kernel * in_channels, out_channels)`; tap `j` sees the input delayed by `(kernel - 1 - j) * dilation`.
    pub weight: ParamId,
    pub bias: ParamId,
    /// 1x1 projection on the residual path when channel counts differ.
    pub downsample: Option<Linear>,
}

/// Causal dilated convolution stack; layer `i` has dilation `2^i`, stride 1,
/// left zero padding, ReLU, dropout, and a residual connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConv {
    pub input: usize,
    pub kernel_size: usize,
    pub dropout: f64,
    pub layers: Vec<ConvLayer>,
    pub readout: Linear,
}

pub fn build_temporal_conv<R: Rng + ?Sized>(
    cfg: &TemporalConvConfig,
    input: usize,
    output: usize,
    params: &mut Params,
    rng: &mut R,
) -> Result<TemporalConv> {
    if cfg.layers == 0 || cfg.channels == 0 || cfg.kernel_size == 0 || input == 0 || output == 0 {
        return Err(Error::Config(format!(
            "temporal-conv model needs positive sizes, got layers={} channels={} kernel={}",
            cfg.layers, cfg.channels, cfg.kernel_size
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut c_in = input;
    for i in 0..cfg.layers {
        let fan_in = cfg.kernel_size * c_in;
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let weight = params.add_uniform(format!("tcn.{i}.weight"), fan_in, cfg.channels, bound, rng);
        let bias = params.add_uniform(format!("tcn.{i}.bias"), 1, cfg.channels, bound, rng);
        let downsample = (c_in != cfg.channels)
            .then(|| Linear::new(params, &format!("tcn.{i}.downsample"), c_in, cfg.channels, rng));
        layers.push(ConvLayer {
            dilation: 1 << i,
            weight,
            bias,
            downsample,
        });
        c_in = cfg.channels;
    }
    let readout = Linear::new(params, "tcn.readout", cfg.channels, output, rng);
    Ok(TemporalConv {
        input,
        kernel_size: cfg.kernel_size,
        dropout: cfg.dropout,
        layers,
        readout,
    })
}

impl SequenceModel for TemporalConv {
    fn input_width(&self) -> usize {
        self.input
    }

    fn output_width(&self) -> usize {
        self.readout.output
    }

    fn forward(&self, g: &mut Graph, params: &Params, x: Var, ctx: &mut ForwardCtx<'_>) -> Var {
        let len = ctx.len;
        let mut h = x;
        for layer in &self.layers {
            let taps: Vec<Var> = (0..self.kernel_size)
                .map(|j| {
                    let shift = (self.kernel_size - 1 - j) * layer.dilation;
                    if shift == 0 {
                        h
                    } else {
                        g.time_shift(h, len, shift)
                    }
                })
                .collect();
            let stacked = if taps.len() == 1 { taps[0] } else { g.concat_cols(&taps) };
            let w = params.leaf(g, layer.weight);
            let b = params.leaf(g, layer.bias);
            let conv = g.matmul(stacked, w);
            let conv = g.add_row(conv, b);
            let act = g.relu(conv);
            let act = ctx.dropout(g, act, self.dropout);
            let res = match &layer.downsample {
                Some(d) => d.forward(g, params, h),
                None => h,
            };
            let sum = g.add(act, res);
            h = g.relu(sum);
        }
        self.readout.forward(g, params, h)
    }
}
