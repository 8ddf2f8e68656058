use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, Params};
use crate::autograd::{Graph, Var};
use crate::data::{is_valid_code, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Width of every categorical embedding.
pub const EMBEDDING_DIM: usize = 5;

/// One model input slot: a continuous pass-through or a categorical embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub variable: usize,
    pub name: String,
    pub table: Option<(ParamId, usize)>,
}

impl EncodedColumn {
    pub fn width(&self) -> usize {
        if self.table.is_some() {
            EMBEDDING_DIM
        } else {
            1
        }
    }
}

/// Maps raw rows to model inputs: continuous values pass through, categorical
/// codes become rows of a `cardinality x 5` table. Column order follows `inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    pub num_vars: usize,
    pub columns: Vec<EncodedColumn>,
}

impl InputEncoder {
    pub fn new<R: Rng + ?Sized>(
        specs: &[VariableSpec],
        inputs: &[usize],
        params: &mut Params,
        rng: &mut R,
    ) -> Result<Self> {
        let mut columns = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let spec = specs
                .get(v)
                .ok_or_else(|| Error::Config(format!("input variable index {v} out of range")))?;
            let table = match spec.kind {
                VariableKind::Categorical { cardinality } => {
                    if cardinality == 0 {
                        return Err(Error::Config(format!("`{}` has cardinality 0", spec.name)));
                    }
                    let m = Matrix::from_fn(cardinality, EMBEDDING_DIM, |_, _| rng.sample(StandardNormal));
                    Some((params.add(format!("embedding.{}", spec.name), m), cardinality))
                }
                VariableKind::Continuous => None,
            };
            columns.push(EncodedColumn {
                variable: v,
                name: spec.name.clone(),
                table,
            });
        }
        Ok(Self {
            num_vars: specs.len(),
            columns,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(EncodedColumn::width).sum()
    }

    /// Encodes `rows` rows of row-major dataset values onto the tape.
    pub fn encode(&self, g: &mut Graph, params: &Params, values: &[f64], rows: usize) -> Result<Var> {
        let nv = self.num_vars;
        if values.len() != rows * nv {
            return Err(Error::ShapeMismatch {
                expected: (rows, nv),
                actual: (values.len() / nv.max(1), nv),
            });
        }
        let mut parts = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        let flush = |g: &mut Graph, run: &mut Vec<usize>, parts: &mut Vec<Var>| {
            if run.is_empty() {
                return;
            }
            let m = Matrix::from_fn(rows, run.len(), |r, c| values[r * nv + run[c]]);
            parts.push(g.constant(m));
            run.clear();
        };
        for col in &self.columns {
            match col.table {
                None => run.push(col.variable),
                Some((table, cardinality)) => {
                    flush(g, &mut run, &mut parts);
                    let mut idx = Vec::with_capacity(rows);
                    for r in 0..rows {
                        let code = values[r * nv + col.variable];
                        if !is_valid_code(code, cardinality) {
                            return Err(Error::CodeOutOfRange {
                                variable: col.name.clone(),
                                code,
                                cardinality,
                            });
                        }
                        idx.push(code as usize);
                    }
                    let t = params.leaf(g, table);
                    parts.push(g.gather_rows(t, idx));
                }
            }
        }
        flush(g, &mut run, &mut parts);
        Ok(if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)
        })
    }
}

/// Encodes rows into a plain matrix, outside any training graph.
pub fn encode_inputs(encoder: &InputEncoder, params: &Params, values: &[f64], rows: usize) -> Result<Matrix> {
    let mut g = Graph::new();
    let v = encoder.encode(&mut g, params, values, rows)?;
    Ok(g.value(v).clone())
}
