use alloc::format;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, Params};
use crate::autograd::{Graph, Var};

/// Affine map applied to every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights and bias uniform in `±1/sqrt(input)`.
    pub fn new<R: Rng + ?Sized>(params: &mut Params, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(input as f64);
        let weight = params.add_uniform(format!("{name}.weight"), input, output, bound, rng);
        let bias = params.add_uniform(format!("{name}.bias"), 1, output, bound, rng);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &Params, x: Var) -> Var {
        let w = params.leaf(g, self.weight);
        let b = params.leaf(g, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}
