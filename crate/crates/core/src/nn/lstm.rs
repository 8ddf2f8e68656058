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
pub struct RecurrentConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `(input, 4 * hidden)`, gate blocks ordered input, forget, cell, output.
    pub w_ih: ParamId,
    /// `(hidden, 4 * hidden)`.
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Stacked LSTM with a shared per-step linear readout. Causal by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recurrent {
    pub input: usize,
    pub hidden: usize,
    pub layers: Vec<LstmLayer>,
    pub readout: Linear,
}

pub fn build_recurrent<R: Rng + ?Sized>(
    cfg: &RecurrentConfig,
    input: usize,
    output: usize,
    params: &mut Params,
    rng: &mut R,
) -> Result<Recurrent> {
    if cfg.layers == 0 || cfg.hidden == 0 || input == 0 || output == 0 {
        return Err(Error::Config(format!(
            "recurrent model needs positive layers/width, got layers={} hidden={} input={input} output={output}",
            cfg.layers, cfg.hidden
        )));
    }
    let h = cfg.hidden;
    let bound = 1.0 / libm::sqrt(h as f64);
    let layers = (0..cfg.layers)
        .map(|l| {
            let fan_in = if l == 0 { input } else { h };
            LstmLayer {
                w_ih: params.add_uniform(format!("lstm.{l}.w_ih"), fan_in, 4 * h, bound, rng),
                w_hh: params.add_uniform(format!("lstm.{l}.w_hh"), h, 4 * h, bound, rng),
                bias: params.add_uniform(format!("lstm.{l}.bias"), 1, 4 * h, bound, rng),
            }
        })
        .collect();
    let readout = Linear::new(params, "lstm.readout", h, output, rng);
    Ok(Recurrent {
        input,
        hidden: h,
        layers,
        readout,
    })
}

impl SequenceModel for Recurrent {
    fn input_width(&self) -> usize {
        self.input
    }

    fn output_width(&self) -> usize {
        self.readout.output
    }

    fn forward(&self, g: &mut Graph, params: &Params, x: Var, ctx: &mut ForwardCtx<'_>) -> Var {
        let len = ctx.len;
        let mut seq = x;
        for layer in &self.layers {
            let w_ih = params.leaf(g, layer.w_ih);
            let w_hh = params.leaf(g, layer.w_hh);
            let bias = params.leaf(g, layer.bias);
            let proj = g.matmul(seq, w_ih);
            let proj = g.add_row(proj, bias);
            seq = g.lstm_sequence(proj, w_hh, len);
        }
        self.readout.forward(g, params, seq)
    }
}
