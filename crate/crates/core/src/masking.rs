//! Sliding windows, mask-length and mask-value sampling, and the masked-only loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{MaskedBatch, Role, TimeSeriesDataset, ValueRange, VariableKind, VariableSpec, Window};
use crate::error::{Error, Result};
use crate::rng::Rng64;

/// The window of `history + k + 1` rows starting at `origin`.
pub fn window_at(ds: &TimeSeriesDataset, origin: usize, history: usize, k: usize) -> Result<Window> {
    let len = history + k + 1;
    if origin + len > ds.num_steps() {
        return Err(Error::InsufficientData {
            required: origin + len,
            available: ds.num_steps(),
        });
    }
    let v = ds.num_variables();
    Ok(Window {
        data: ds.values()[origin * v..(origin + len) * v].to_vec(),
        origin,
        history,
        k,
        num_vars: v,
    })
}

/// Windows at offsets `0, stride, 2*stride, ...`.
pub fn slide_windows(ds: &TimeSeriesDataset, history: usize, k: usize, stride: usize) -> Result<Vec<Window>> {
    if history == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "history ({history}) and stride ({stride}) must be positive"
        )));
    }
    window_origins(0..ds.num_steps(), history + k + 1, stride)?
        .into_iter()
        .map(|o| window_at(ds, o, history, k))
        .collect()
}

/// Start offsets of every `len`-row window lying inside `rows`.
pub fn window_origins(rows: core::ops::Range<usize>, len: usize, stride: usize) -> Result<Vec<usize>> {
    if rows.len() < len {
        return Err(Error::InsufficientData {
            required: len,
            available: rows.len(),
        });
    }
    Ok((rows.start..=rows.end - len).step_by(stride.max(1)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MaskDomain {
    Continuous(ValueRange),
    Categorical(usize),
}

/// Draws mask lengths and replacement values for forecast variables.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    rng: Rng64,
    targets: Vec<(usize, MaskDomain)>,
}

impl MaskSampler {
    /// Every continuous forecast variable must carry an `observed_range`.
    pub fn new(specs: &[VariableSpec], rng: Rng64) -> Result<Self> {
        let mut targets = Vec::new();
        for (i, s) in specs.iter().enumerate().filter(|(_, s)| s.role == Role::Forecast) {
            let domain =
                match s.kind {
                    VariableKind::Continuous => MaskDomain::Continuous(s.observed_range.ok_or_else(|| {
                        Error::Config(format!("forecast variable `{}` has no observed range", s.name))
                    })?),
                    VariableKind::Categorical { cardinality } => MaskDomain::Categorical(cardinality),
                };
            targets.push((i, domain));
        }
        Ok(Self { rng, targets })
    }

    pub fn num_forecast(&self) -> usize {
        self.targets.len()
    }

    /// Uniform over `1..=k+1`.
    pub fn sample_mask_length(&mut self, k: usize) -> usize {
        self.sample_length_up_to(k + 1)
    }

    /// Uniform over `1..=max`.
    pub fn sample_length_up_to(&mut self, max: usize) -> usize {
        self.rng.random_range(1..=max.max(1))
    }

    fn sample_value(&mut self, domain: MaskDomain) -> f64 {
        match domain {
            MaskDomain::Continuous(r) if r.max > r.min => self.rng.random_range(r.min..=r.max),
            MaskDomain::Continuous(r) => r.min,
            MaskDomain::Categorical(c) => self.rng.random_range(0..c) as f64,
        }
    }

    /// Overwrites forecast-variable cells of the last `mask_len` rows of a
    /// row-major `(rows, num_vars)` block with fresh independent draws.
    pub fn fill(&mut self, rows: &mut [f64], num_vars: usize, mask_len: usize) {
        let n = rows.len() / num_vars;
        for r in n - mask_len..n {
            for t in 0..self.targets.len() {
                let (var, domain) = self.targets[t];
                rows[r * num_vars + var] = self.sample_value(domain);
            }
        }
    }
}

/// Masks the last `mask_len` forecast-region rows of each window.
pub fn apply_mask(windows: &[Window], mask_len: usize, sampler: &mut MaskSampler) -> Result<MaskedBatch> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("apply_mask on an empty batch".into()))?;
    let (history, k, nv) = (first.history, first.k, first.num_vars);
    if mask_len == 0 || mask_len > k + 1 {
        return Err(Error::Contract(format!(
            "mask length {mask_len} outside [1, {}]",
            k + 1
        )));
    }
    if windows
        .iter()
        .any(|w| w.history != history || w.k != k || w.num_vars != nv)
    {
        return Err(Error::Contract("windows in a batch must share T, k and width".into()));
    }
    let len = history + k + 1;
    let m = sampler.num_forecast();
    let forecast_vars: Vec<usize> = sampler.targets.iter().map(|t| t.0).collect();
    let mut inputs = Vec::with_capacity(windows.len() * len * nv);
    let mut targets = Vec::with_capacity(windows.len() * (k + 1) * m);
    let mut loss_mask = Vec::with_capacity(windows.len() * (k + 1));
    for w in windows {
        let start = inputs.len();
        inputs.extend_from_slice(&w.data);
        for r in history..len {
            for &v in &forecast_vars {
                targets.push(w.data[r * nv + v]);
            }
            loss_mask.push(r >= len - mask_len);
        }
        sampler.fill(&mut inputs[start..], nv, mask_len);
    }
    Ok(MaskedBatch {
        inputs,
        targets,
        loss_mask,
        mask_length: mask_len,
        batch: windows.len(),
        history,
        k,
        num_vars: nv,
        num_forecast: m,
    })
}

fn check_prediction_shape(predictions: &[f64], batch: &MaskedBatch) -> Result<()> {
    if predictions.len() != batch.targets.len() {
        return Err(Error::ShapeMismatch {
            expected: (batch.batch * (batch.k + 1), batch.num_forecast),
            actual: (predictions.len() / batch.num_forecast.max(1), batch.num_forecast),
        });
    }
    Ok(())
}

/// Mean squared error over masked cells of `(batch, k+1, m)` predictions.
pub fn masked_loss(predictions: &[f64], batch: &MaskedBatch) -> Result<f64> {
    check_prediction_shape(predictions, batch)?;
    let m = batch.num_forecast;
    let (mut sum, mut count) = (0.0, 0usize);
    for (row, _) in batch.loss_mask.iter().enumerate().filter(|(_, &on)| on) {
        for j in 0..m {
            let d = predictions[row * m + j] - batch.targets[row * m + j];
            sum += d * d;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Analytic gradient of [`masked_loss`] with respect to the predictions.
pub fn masked_loss_grad(predictions: &[f64], batch: &MaskedBatch) -> Result<Vec<f64>> {
    check_prediction_shape(predictions, batch)?;
    let m = batch.num_forecast;
    let count = batch.loss_mask.iter().filter(|&&on| on).count() * m;
    let mut grad = vec![0.0; predictions.len()];
    if count == 0 {
        return Ok(grad);
    }
    for (row, _) in batch.loss_mask.iter().enumerate().filter(|(_, &on)| on) {
        for j in 0..m {
            let i = row * m + j;
            grad[i] = 2.0 * (predictions[i] - batch.targets[i]) / count as f64;
        }
    }
    Ok(grad)
}
