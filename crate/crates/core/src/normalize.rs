//! Per-variable affine scaling fitted on training rows, and the chronological split.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{TimeSeriesDataset, ValueRange, VariableKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMethod {
    #[default]
    Zscore,
    Minmax,
}

/// `normalized = (raw - shift) / scale`. Categorical variables carry `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub method: NormalizationMethod,
    pub names: Vec<String>,
    pub params: Vec<Option<Affine>>,
}

impl Normalizer {
    /// Fits shift/scale for every continuous variable on `train_rows` only.
    pub fn fit(ds: &TimeSeriesDataset, train_rows: Range<usize>, method: NormalizationMethod) -> Result<Self> {
        if train_rows.is_empty() || train_rows.end > ds.num_steps() {
            return Err(Error::Contract(alloc::format!(
                "training row range {train_rows:?} invalid for {} rows",
                ds.num_steps()
            )));
        }
        let n = train_rows.len() as f64;
        let mut params = Vec::with_capacity(ds.num_variables());
        for (j, spec) in ds.specs().iter().enumerate() {
            if let VariableKind::Categorical { .. } = spec.kind {
                params.push(None);
                continue;
            }
            let col = train_rows.clone().map(|r| ds.get(r, j));
            let affine = match method {
                NormalizationMethod::Zscore => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    let std = libm::sqrt(var);
                    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN fails too
                    if !(std > 0.0) {
                        return Err(Error::DegenerateScale {
                            variable: spec.name.clone(),
                            reason: "zero variance over training rows",
                        });
                    }
                    Affine {
                        shift: mean,
                        scale: std,
                    }
                }
                NormalizationMethod::Minmax => {
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(hi - lo > 0.0) {
                        return Err(Error::DegenerateScale {
                            variable: spec.name.clone(),
                            reason: "zero range over training rows",
                        });
                    }
                    Affine {
                        shift: lo,
                        scale: hi - lo,
                    }
                }
            };
            params.push(Some(affine));
        }
        Ok(Self {
            method,
            names: ds.specs().iter().map(|s| s.name.clone()).collect(),
            params,
        })
    }

    fn check(&self, ds: &TimeSeriesDataset) -> Result<()> {
        let matches =
            ds.num_variables() == self.names.len() && ds.specs().iter().zip(&self.names).all(|(s, n)| &s.name == n);
        if matches {
            Ok(())
        } else {
            Err(Error::Contract("normalizer fitted on a different variable set".into()))
        }
    }

    pub fn normalize_value(&self, var: usize, x: f64) -> f64 {
        match self.params[var] {
            Some(a) => (x - a.shift) / a.scale,
            None => x,
        }
    }

    pub fn denormalize_value(&self, var: usize, x: f64) -> f64 {
        match self.params[var] {
            Some(a) => x * a.scale + a.shift,
            None => x,
        }
    }

    /// Normalizes a row-major block whose columns follow the fitted variable order.
    pub fn normalize_rows(&self, values: &mut [f64]) {
        let v = self.params.len();
        for (i, x) in values.iter_mut().enumerate() {
            *x = self.normalize_value(i % v, *x);
        }
    }

    pub fn denormalize_rows(&self, values: &mut [f64]) {
        let v = self.params.len();
        for (i, x) in values.iter_mut().enumerate() {
            *x = self.denormalize_value(i % v, *x);
        }
    }

    /// Normalizes values and any fitted observed ranges.
    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.check(ds)?;
        let mut values = ds.values().to_vec();
        self.normalize_rows(&mut values);
        let specs = ds
            .specs()
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let mut s = s.clone();
                s.observed_range = s
                    .observed_range
                    .map(|r| ValueRange::new(self.normalize_value(j, r.min), self.normalize_value(j, r.max)));
                s
            })
            .collect();
        TimeSeriesDataset::new(specs, values, ds.timestamps().to_vec())
    }

    pub fn invert(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.check(ds)?;
        let mut values = ds.values().to_vec();
        self.denormalize_rows(&mut values);
        let specs = ds
            .specs()
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let mut s = s.clone();
                s.observed_range = s
                    .observed_range
                    .map(|r| ValueRange::new(self.denormalize_value(j, r.min), self.denormalize_value(j, r.max)));
                s
            })
            .collect();
        TimeSeriesDataset::new(specs, values, ds.timestamps().to_vec())
    }
}

/// Row ranges of a chronological train/validation split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub validation: Range<usize>,
}

/// First `floor(train_fraction * num_steps)` rows train, the rest validate.
///
/// `min_train_rows` is the window length the caller needs; fewer training
/// rows is an insufficient-data error.
pub fn chrono_split(num_steps: usize, train_fraction: f64, min_train_rows: usize) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(alloc::format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let cut = libm::floor(train_fraction * num_steps as f64) as usize;
    if cut < min_train_rows {
        return Err(Error::InsufficientData {
            required: min_train_rows,
            available: cut,
        });
    }
    Ok(Split {
        train: 0..cut,
        validation: cut..num_steps,
    })
}
