//! Inference for each formulation, on raw-scale inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{role_indices, Role, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::masking::MaskSampler;
use crate::nn::{ForwardCtx, Network};
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;
use crate::train::{Formulation, TrainedForecaster};

/// Raw-scale rows in dataset variable order. The last `horizon` rows form the
/// forecast region; forecast-variable cells there are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRequest {
    pub values: Vec<f64>,
    pub rows: usize,
    pub horizon: usize,
    /// Selects the MMMF mask-value stream, so results do not depend on batching.
    pub key: u64,
}

impl ForecastRequest {
    /// Rows `[start - context, start + horizon)` of `ds`; `start` is the first forecast step.
    pub fn from_dataset(ds: &TimeSeriesDataset, start: usize, context: usize, horizon: usize) -> Result<Self> {
        if start < context || start + horizon > ds.num_steps() {
            return Err(Error::InsufficientData {
                required: context + horizon,
                available: ds
                    .num_steps()
                    .saturating_sub(start.saturating_sub(context))
                    .min(start + horizon),
            });
        }
        let nv = ds.num_variables();
        let lo = start - context;
        Ok(Self {
            values: ds.values()[lo * nv..(start + horizon) * nv].to_vec(),
            rows: context + horizon,
            horizon,
            key: start as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceOptions {
    /// Seed of the MMMF mask-value stream.
    pub mask_seed: u64,
    /// Number of independent mask fills averaged per MMMF forecast.
    pub mask_fills: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            mask_seed: 0,
            mask_fills: 1,
        }
    }
}

/// Largest horizon a forecaster can serve; RSF rolls out without limit.
pub fn max_horizon(f: &TrainedForecaster) -> Option<usize> {
    match f.formulation {
        Formulation::Mmmf | Formulation::Dmf => Some(f.config.k + 1),
        Formulation::Rsf | Formulation::Sbf => None,
    }
}

/// Rows needed before the forecast region for a `horizon`-step forecast.
pub fn required_context(f: &TrainedForecaster, horizon: usize) -> Result<usize> {
    if horizon == 0 || max_horizon(f).is_some_and(|m| horizon > m) {
        return Err(Error::Contract(format!(
            "horizon {horizon} outside [1, {}] for {}",
            max_horizon(f).map_or("unbounded".into(), |m| format!("{m}")),
            f.formulation
        )));
    }
    let c = &f.config;
    Ok(match f.formulation {
        Formulation::Mmmf => c.history + c.k + 1 - horizon,
        Formulation::Rsf => c.history,
        Formulation::Dmf => c.dmf_input_len(),
        Formulation::Sbf => 0,
    })
}

/// Per-request `(horizon, m)` forecasts on the raw scale, all requests sharing one horizon.
pub fn forecast(f: &TrainedForecaster, requests: &[ForecastRequest], opts: &InferenceOptions) -> Result<Vec<Matrix>> {
    let Some(first) = requests.first() else {
        return Ok(Vec::new());
    };
    let h = first.horizon;
    let context = required_context(f, h)?;
    let nv = f.specs.len();
    let mut norm = Vec::with_capacity(requests.len() * (context + h) * nv);
    for r in requests {
        if r.horizon != h {
            return Err(Error::Contract("requests in one call must share a horizon".into()));
        }
        if r.values.len() != r.rows * nv {
            return Err(Error::ShapeMismatch {
                expected: (r.rows, nv),
                actual: (r.values.len() / nv, nv),
            });
        }
        if r.rows < context + h {
            return Err(Error::InsufficientData {
                required: context + h,
                available: r.rows,
            });
        }
        let tail = &r.values[(r.rows - context - h) * nv..];
        check_known_cells(f, tail, context, h)?;
        let start = norm.len();
        norm.extend_from_slice(tail);
        f.normalizer.normalize_rows(&mut norm[start..]);
    }
    let out = match f.formulation {
        Formulation::Mmmf => forecast_masked(f, requests, &norm, h, opts)?,
        Formulation::Rsf => forecast_recursive(f, &mut norm, requests.len(), h)?.0,
        Formulation::Dmf => forecast_direct(f, &norm, requests.len(), h)?,
        Formulation::Sbf => forecast_per_step(f, &norm, requests.len(), h)?,
    };
    let forecast = f.forecast_indices();
    let m = forecast.len();
    Ok(out
        .chunks(h * m)
        .map(|block| {
            Matrix::from_fn(h, m, |t, j| {
                f.normalizer.denormalize_value(forecast[j], block[t * m + j])
            })
        })
        .collect())
}

/// Every predictor cell, and every forecast cell before the region, must be known.
fn check_known_cells(f: &TrainedForecaster, rows: &[f64], context: usize, h: usize) -> Result<()> {
    let nv = f.specs.len();
    for (i, row) in rows.chunks(nv).enumerate() {
        for (v, s) in f.specs.iter().enumerate() {
            let needed = s.role == Role::Predictor || i < context;
            if needed && !row[v].is_finite() {
                let what = if i < context { "history" } else { "future predictor" };
                return Err(Error::Contract(format!(
                    "missing {what} value for `{}` at request row {i} of {}",
                    s.name,
                    context + h
                )));
            }
        }
    }
    Ok(())
}

fn run(network: &Network, inputs: &[f64], batch: usize, len: usize) -> Result<Matrix> {
    let mut g = Graph::new();
    let mut ctx = ForwardCtx::eval(batch, len);
    let out = network.forward(&mut g, inputs, &mut ctx)?;
    Ok(g.value(out).clone())
}

/// Reads `(batch, h, m)` outputs at positions `[len - h, len)` of each sequence.
fn tail_outputs(out: &Matrix, batch: usize, len: usize, h: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(batch * h * out.cols());
    for b in 0..batch {
        for t in len - h..len {
            v.extend_from_slice(out.row(b * len + t));
        }
    }
    v
}

fn forecast_masked(
    f: &TrainedForecaster,
    requests: &[ForecastRequest],
    norm: &[f64],
    h: usize,
    opts: &InferenceOptions,
) -> Result<Vec<f64>> {
    let nv = f.specs.len();
    let len = f.config.history + f.config.k + 1;
    let batch = requests.len();
    let mut samplers = requests
        .iter()
        .map(|r| MaskSampler::new(&f.specs, mask_stream(opts.mask_seed, r.key)))
        .collect::<Result<Vec<_>>>()?;
    let fills = opts.mask_fills.max(1);
    let mut acc = vec![0.0; batch * h * f.forecast_indices().len()];
    let mut inputs = norm.to_vec();
    for _ in 0..fills {
        for (seq, sampler) in inputs.chunks_mut(len * nv).zip(&mut samplers) {
            sampler.fill(seq, nv, h);
        }
        let out = run(&f.network, &inputs, batch, len)?;
        for (a, v) in acc.iter_mut().zip(tail_outputs(&out, batch, len, h)) {
            *a += v / fills as f64;
        }
    }
    Ok(acc)
}

/// Mask-value stream for one request.
pub fn mask_stream(seed: u64, key: u64) -> crate::rng::Rng64 {
    stream(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15), Stream::Inference)
}

fn forecast_direct(f: &TrainedForecaster, norm: &[f64], batch: usize, h: usize) -> Result<Vec<f64>> {
    let nv = f.specs.len();
    let len = f.config.dmf_input_len();
    let k1 = f.config.k + 1;
    let mut inputs = Vec::with_capacity(batch * len * nv);
    for seq in norm.chunks((len + h) * nv) {
        inputs.extend_from_slice(&seq[..len * nv]);
    }
    let out = run(&f.network, &inputs, batch, len)?;
    let m = out.cols();
    let block = tail_outputs(&out, batch, len, k1);
    Ok(block.chunks(k1 * m).flat_map(|b| b[..h * m].iter().copied()).collect())
}

fn forecast_per_step(f: &TrainedForecaster, norm: &[f64], batch: usize, h: usize) -> Result<Vec<f64>> {
    let out = run(&f.network, norm, batch * h, 1)?;
    Ok(out.into_vec())
}

/// Per-step count of predicted forecast rows inside the model's input window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutTrace {
    pub predicted_in_window: Vec<usize>,
}

fn forecast_recursive(
    f: &TrainedForecaster,
    norm: &mut [f64],
    batch: usize,
    h: usize,
) -> Result<(Vec<f64>, RolloutTrace)> {
    let forecast = f.forecast_indices();
    let network = &f.network;
    recursive_rollout(
        norm,
        batch,
        f.config.history,
        h,
        f.specs.len(),
        &forecast,
        |inputs, b, len| {
            let out = run(network, inputs, b, len)?;
            Ok(tail_outputs(&out, b, len, 1))
        },
    )
}

/// Rolls a one-step predictor forward `horizon` steps.
///
/// `sequences` holds `batch` blocks of `history + horizon` normalized rows. At
/// step `j` the predictor sees rows `[j, j + history)`: true predictors
/// throughout, and predictions in place of forecast values from row `history`
/// on. `predict(inputs, batch, history)` returns `(batch, m)` next-step values.
pub fn recursive_rollout<F>(
    sequences: &mut [f64],
    batch: usize,
    history: usize,
    horizon: usize,
    num_vars: usize,
    forecast: &[usize],
    mut predict: F,
) -> Result<(Vec<f64>, RolloutTrace)>
where
    F: FnMut(&[f64], usize, usize) -> Result<Vec<f64>>,
{
    let (len, nv, m) = (history + horizon, num_vars, forecast.len());
    if sequences.len() != batch * len * nv {
        return Err(Error::ShapeMismatch {
            expected: (batch * len, nv),
            actual: (sequences.len() / nv.max(1), nv),
        });
    }
    let mut predicted = vec![false; len];
    let mut trace = Vec::with_capacity(horizon);
    let mut inputs = vec![0.0; batch * history * nv];
    for j in 0..horizon {
        for b in 0..batch {
            let src = &sequences[(b * len + j) * nv..(b * len + j + history) * nv];
            inputs[b * history * nv..(b + 1) * history * nv].copy_from_slice(src);
        }
        trace.push(predicted[j..j + history].iter().filter(|&&p| p).count());
        let next = predict(&inputs, batch, history)?;
        if next.len() != batch * m {
            return Err(Error::ShapeMismatch {
                expected: (batch, m),
                actual: (next.len() / m.max(1), m),
            });
        }
        let row = history + j;
        for b in 0..batch {
            for (c, &v) in forecast.iter().enumerate() {
                sequences[(b * len + row) * nv + v] = next[b * m + c];
            }
        }
        predicted[row] = true;
    }
    let mut out = Vec::with_capacity(batch * horizon * m);
    for b in 0..batch {
        for row in history..len {
            for &v in forecast {
                out.push(sequences[(b * len + row) * nv + v]);
            }
        }
    }
    Ok((
        out,
        RolloutTrace {
            predicted_in_window: trace,
        },
    ))
}

/// Forecasts and aligned ground truth, `(n, horizon, m)` each, on the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub horizon: usize,
    pub variables: Vec<alloc::string::String>,
    pub starts: Vec<usize>,
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
}

impl ForecastSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Cells at forecast step `step` (0-based) of variable `var`; `None` selects all.
    pub fn cells(&self, step: Option<usize>, var: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let (h, m) = (self.horizon, self.variables.len());
        let mut p = Vec::new();
        let mut t = Vec::new();
        for i in 0..self.len() {
            for s in 0..h {
                if step.is_some_and(|x| x != s) {
                    continue;
                }
                for v in 0..m {
                    if var.is_some_and(|x| x != v) {
                        continue;
                    }
                    let idx = (i * h + s) * m + v;
                    p.push(self.predictions[idx]);
                    t.push(self.truths[idx]);
                }
            }
        }
        (p, t)
    }
}

/// Forecasts from every start in `starts` in chunks of `chunk` requests.
pub fn collect_forecasts(
    f: &TrainedForecaster,
    ds: &TimeSeriesDataset,
    starts: &[usize],
    horizon: usize,
    opts: &InferenceOptions,
    chunk: usize,
) -> Result<ForecastSet> {
    if ds.specs().len() != f.specs.len()
        || ds
            .specs()
            .iter()
            .zip(&f.specs)
            .any(|(a, b)| a.name != b.name || a.role != b.role)
    {
        return Err(Error::Contract(
            "dataset variables differ from the trained forecaster's".into(),
        ));
    }
    let context = required_context(f, horizon)?;
    let forecast = role_indices(ds.specs(), Role::Forecast);
    let mut predictions = Vec::with_capacity(starts.len() * horizon * forecast.len());
    let mut truths = Vec::with_capacity(predictions.capacity());
    for group in starts.chunks(chunk.max(1)) {
        let requests = group
            .iter()
            .map(|&s| ForecastRequest::from_dataset(ds, s, context, horizon))
            .collect::<Result<Vec<_>>>()?;
        for (m, &s) in forecast_blind(f, requests, opts)?.iter().zip(group) {
            predictions.extend_from_slice(m.data());
            for t in s..s + horizon {
                truths.extend(forecast.iter().map(|&v| ds.get(t, v)));
            }
        }
    }
    Ok(ForecastSet {
        horizon,
        variables: forecast.iter().map(|&v| ds.specs()[v].name.clone()).collect(),
        starts: starts.to_vec(),
        predictions,
        truths,
    })
}

/// Blanks forecast-region targets before inference so no method can read them.
fn forecast_blind(
    f: &TrainedForecaster,
    mut requests: Vec<ForecastRequest>,
    opts: &InferenceOptions,
) -> Result<Vec<Matrix>> {
    let nv = f.specs.len();
    let targets = f.forecast_indices();
    for r in &mut requests {
        for row in r.rows - r.horizon..r.rows {
            for &v in &targets {
                r.values[row * nv + v] = f64::NAN;
            }
        }
    }
    forecast(f, &requests, opts)
}

/// Rollout with its window trace, for instrumentation.
pub fn forecast_rsf_traced(f: &TrainedForecaster, request: &ForecastRequest) -> Result<(Matrix, RolloutTrace)> {
    if f.formulation != Formulation::Rsf {
        return Err(Error::Contract(format!(
            "{} forecaster used for a recursive rollout",
            f.formulation
        )));
    }
    let h = request.horizon;
    let context = required_context(f, h)?;
    let nv = f.specs.len();
    if request.rows < context + h {
        return Err(Error::InsufficientData {
            required: context + h,
            available: request.rows,
        });
    }
    let mut norm = request.values[(request.rows - context - h) * nv..].to_vec();
    f.normalizer.normalize_rows(&mut norm);
    let (out, trace) = forecast_recursive(f, &mut norm, 1, h)?;
    let forecast = f.forecast_indices();
    let m = forecast.len();
    let mat = Matrix::from_fn(h, m, |t, j| f.normalizer.denormalize_value(forecast[j], out[t * m + j]));
    Ok((mat, trace))
}

fn forecast_checked(
    f: &TrainedForecaster,
    expected: Formulation,
    request: &ForecastRequest,
    opts: &InferenceOptions,
) -> Result<Matrix> {
    if f.formulation != expected {
        return Err(Error::Contract(format!(
            "{} forecaster used for {expected} inference",
            f.formulation
        )));
    }
    Ok(forecast(f, core::slice::from_ref(request), opts)?.remove(0))
}

pub fn forecast_mmmf(f: &TrainedForecaster, request: &ForecastRequest, opts: &InferenceOptions) -> Result<Matrix> {
    forecast_checked(f, Formulation::Mmmf, request, opts)
}

pub fn forecast_rsf(f: &TrainedForecaster, request: &ForecastRequest) -> Result<Matrix> {
    forecast_checked(f, Formulation::Rsf, request, &InferenceOptions::default())
}

pub fn forecast_dmf(f: &TrainedForecaster, request: &ForecastRequest) -> Result<Matrix> {
    forecast_checked(f, Formulation::Dmf, request, &InferenceOptions::default())
}

pub fn forecast_sbf(f: &TrainedForecaster, request: &ForecastRequest) -> Result<Matrix> {
    forecast_checked(f, Formulation::Sbf, request, &InferenceOptions::default())
}
