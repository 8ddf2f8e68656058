use alloc::format;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::params::Params;
use super::{ForwardCtx, SequenceModel};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedForwardConfig {
    pub hidden: usize,
}

impl Default for FeedForwardConfig {
    fn default() -> Self {
        Self { hidden: 50 }
    }
}

/// Two fully connected layers with a ReLU between them, applied to each step alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

pub fn build_feedforward<R: Rng + ?Sized>(
    cfg: &FeedForwardConfig,
    input: usize,
    output: usize,
    params: &mut Params,
    rng: &mut R,
) -> Result<FeedForward> {
    if cfg.hidden == 0 || input == 0 || output == 0 {
        return Err(Error::Config(format!(
            "feed-forward model needs positive widths, got hidden={} input={input} output={output}",
            cfg.hidden
        )));
    }
    Ok(FeedForward {
        hidden: Linear::new(params, "ff.hidden", input, cfg.hidden, rng),
        out: Linear::new(params, "ff.out", cfg.hidden, output, rng),
    })
}

impl SequenceModel for FeedForward {
    fn input_width(&self) -> usize {
        self.hidden.input
    }

    fn output_width(&self) -> usize {
        self.out.output
    }

    fn forward(&self, g: &mut Graph, params: &Params, x: Var, _ctx: &mut ForwardCtx<'_>) -> Var {
        let h = self.hidden.forward(g, params, x);
        let h = g.relu(h);
        self.out.forward(g, params, h)
    }
}
