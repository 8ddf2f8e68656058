//! Sequence models: the equal-length contract, the four base architectures,
//! and categorical input encoding.

mod attention;
mod encode;
mod feedforward;
mod linear;
mod lstm;
mod params;
mod tcn;

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{build_attention_encoder, positional_encoding, AttentionConfig, AttentionEncoder};
pub use encode::{encode_inputs, EncodedColumn, InputEncoder, EMBEDDING_DIM};
pub use feedforward::{build_feedforward, FeedForward, FeedForwardConfig};
pub use linear::Linear;
pub use lstm::{build_recurrent, Recurrent, RecurrentConfig};
pub use params::{ParamId, Params};
pub use tcn::{build_temporal_conv, receptive_field, TemporalConv, TemporalConvConfig};

use crate::autograd::{Graph, Var};
use crate::data::VariableSpec;
use crate::error::Result;
use crate::rng::{stream, Rng64, Stream};

/// Shape of the current batch and, in training mode, the dropout stream.
pub struct ForwardCtx<'a> {
    pub batch: usize,
    pub len: usize,
    pub dropout_rng: Option<&'a mut Rng64>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval(batch: usize, len: usize) -> Self {
        Self {
            batch,
            len,
            dropout_rng: None,
        }
    }

    pub fn train(batch: usize, len: usize, rng: &'a mut Rng64) -> Self {
        Self {
            batch,
            len,
            dropout_rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_deref_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        g.dropout(x, mask)
    }
}

/// Any model mapping a `(batch * len, input_width)` sequence to `(batch * len, output_width)`.
pub trait SequenceModel {
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn forward(&self, g: &mut Graph, params: &Params, x: Var, ctx: &mut ForwardCtx<'_>) -> Var;
}

/// Architecture-specific hyperparameters. Defaults are the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "kebab-case")]
pub enum HyperParams {
    Recurrent(RecurrentConfig),
    TemporalConv(TemporalConvConfig),
    AttentionEncoder(AttentionConfig),
    FeedForward(FeedForwardConfig),
}

impl HyperParams {
    pub fn name(&self) -> &'static str {
        match self {
            HyperParams::Recurrent(_) => "recurrent",
            HyperParams::TemporalConv(_) => "temporal-conv",
            HyperParams::AttentionEncoder(_) => "attention-encoder",
            HyperParams::FeedForward(_) => "feed-forward",
        }
    }

    pub fn default_for(name: &str) -> Option<Self> {
        Some(match name {
            "recurrent" | "lstm" => HyperParams::Recurrent(RecurrentConfig::default()),
            "temporal-conv" | "tcn" => HyperParams::TemporalConv(TemporalConvConfig::default()),
            "attention-encoder" | "transformer" => HyperParams::AttentionEncoder(AttentionConfig::default()),
            "feed-forward" | "mlp" => HyperParams::FeedForward(FeedForwardConfig::default()),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backbone {
    Recurrent(Recurrent),
    TemporalConv(TemporalConv),
    AttentionEncoder(AttentionEncoder),
    FeedForward(FeedForward),
}

impl Backbone {
    pub fn build<R: Rng + ?Sized>(
        hp: &HyperParams,
        input: usize,
        output: usize,
        params: &mut Params,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match hp {
            HyperParams::Recurrent(c) => Backbone::Recurrent(build_recurrent(c, input, output, params, rng)?),
            HyperParams::TemporalConv(c) => Backbone::TemporalConv(build_temporal_conv(c, input, output, params, rng)?),
            HyperParams::AttentionEncoder(c) => {
                Backbone::AttentionEncoder(build_attention_encoder(c, input, output, params, rng)?)
            }
            HyperParams::FeedForward(c) => Backbone::FeedForward(build_feedforward(c, input, output, params, rng)?),
        })
    }

    fn inner(&self) -> &dyn SequenceModel {
        match self {
            Backbone::Recurrent(m) => m,
            Backbone::TemporalConv(m) => m,
            Backbone::AttentionEncoder(m) => m,
            Backbone::FeedForward(m) => m,
        }
    }
}

impl SequenceModel for Backbone {
    fn input_width(&self) -> usize {
        self.inner().input_width()
    }

    fn output_width(&self) -> usize {
        self.inner().output_width()
    }

    fn forward(&self, g: &mut Graph, params: &Params, x: Var, ctx: &mut ForwardCtx<'_>) -> Var {
        self.inner().forward(g, params, x, ctx)
    }
}

/// Input encoding plus backbone, owning every trainable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub hyper: HyperParams,
    pub params: Params,
    pub encoder: InputEncoder,
    pub backbone: Backbone,
}

impl Network {
    /// Builds a network reading the variables at `inputs` (indices into `specs`)
    /// and emitting `outputs` values per step. Initialization depends only on `seed`.
    pub fn build(
        hyper: &HyperParams,
        specs: &[VariableSpec],
        inputs: &[usize],
        outputs: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        let mut params = Params::new();
        let encoder = InputEncoder::new(specs, inputs, &mut params, &mut rng)?;
        let backbone = Backbone::build(hyper, encoder.width(), outputs, &mut params, &mut rng)?;
        Ok(Self {
            hyper: hyper.clone(),
            params,
            encoder,
            backbone,
        })
    }

    pub fn output_width(&self) -> usize {
        self.backbone.output_width()
    }

    /// `values` is row-major `(batch * len, num_vars)` in dataset variable order.
    pub fn forward(&self, g: &mut Graph, values: &[f64], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let x = self.encoder.encode(g, &self.params, values, ctx.batch * ctx.len)?;
        Ok(self.backbone.forward(g, &self.params, x, ctx))
    }
}
