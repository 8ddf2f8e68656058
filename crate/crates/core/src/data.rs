//! Variable metadata, the aligned multivariate dataset, and windows over it.
//!
//! Categorical variables live in the same `f64` array as continuous ones and
//! hold integer codes; embedding happens at the model boundary.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a variable is known in the future (predictor) or is being forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Predictor,
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VariableKind {
    Continuous,
    Categorical { cardinality: usize },
}

/// Closed value interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub role: Role,
    pub kind: VariableKind,
    /// Fitted on training rows; only meaningful for continuous variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_range: Option<ValueRange>,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            kind: VariableKind::Continuous,
            observed_range: None,
        }
    }

    pub fn categorical(name: impl Into<String>, role: Role, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            role,
            kind: VariableKind::Categorical { cardinality },
            observed_range: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, VariableKind::Categorical { .. })
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            VariableKind::Categorical { cardinality } => Some(cardinality),
            VariableKind::Continuous => None,
        }
    }
}

/// A single invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShapeMismatch { expected: usize, actual: usize },
    TimestampCount { rows: usize, timestamps: usize },
    NoForecastVariable,
    DuplicateName { variable: String },
    ZeroCardinality { variable: String },
    MissingValue { variable: String, row: usize },
    InvalidCode { variable: String, row: usize, code: f64 },
    InvertedRange { variable: String },
    TimestampOrder { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { expected, actual } => {
                write!(f, "value array has {actual} cells, expected {expected}")
            }
            Violation::TimestampCount { rows, timestamps } => {
                write!(f, "{rows} rows but {timestamps} timestamps")
            }
            Violation::NoForecastVariable => write!(f, "no forecast variable declared"),
            Violation::DuplicateName { variable } => {
                write!(f, "variable `{variable}` declared more than once")
            }
            Violation::ZeroCardinality { variable } => {
                write!(f, "categorical variable `{variable}` has cardinality 0")
            }
            Violation::MissingValue { variable, row } => {
                write!(f, "missing value for `{variable}` at row {row}")
            }
            Violation::InvalidCode { variable, row, code } => {
                write!(f, "invalid code {code} for `{variable}` at row {row}")
            }
            Violation::InvertedRange { variable } => {
                write!(f, "observed range of `{variable}` has min > max")
            }
            Violation::TimestampOrder { row } => {
                write!(f, "timestamp at row {row} does not increase")
            }
        }
    }
}

/// Aligned multivariate series: `values` is row-major `(num_steps, num_variables)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    specs: Vec<VariableSpec>,
    values: Vec<f64>,
    timestamps: Vec<String>,
}

impl TimeSeriesDataset {
    /// Builds a dataset and rejects it if any invariant is violated.
    pub fn new(specs: Vec<VariableSpec>, values: Vec<f64>, timestamps: Vec<String>) -> Result<Self> {
        let ds = Self::new_unchecked(specs, values, timestamps);
        let violations = validate_dataset(&ds);
        if violations.is_empty() {
            Ok(ds)
        } else {
            Err(Error::InvalidDataset(violations))
        }
    }

    /// Builds a dataset without validation. Use [`validate_dataset`] to inspect it.
    pub fn new_unchecked(specs: Vec<VariableSpec>, values: Vec<f64>, timestamps: Vec<String>) -> Self {
        Self {
            specs,
            values,
            timestamps,
        }
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn num_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn num_variables(&self) -> usize {
        self.specs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let v = self.num_variables();
        &self.values[i * v..(i + 1) * v]
    }

    pub fn get(&self, row: usize, var: usize) -> f64 {
        self.values[row * self.num_variables() + var]
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        let v = self.num_variables();
        self.values.iter().skip(var).step_by(v).copied().collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn forecast_indices(&self) -> Vec<usize> {
        role_indices(&self.specs, Role::Forecast)
    }

    pub fn predictor_indices(&self) -> Vec<usize> {
        role_indices(&self.specs, Role::Predictor)
    }

    /// Contiguous sub-range of rows, keeping specs.
    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        let v = self.num_variables();
        Self {
            specs: self.specs.clone(),
            values: self.values[rows.start * v..rows.end * v].to_vec(),
            timestamps: self.timestamps[rows].to_vec(),
        }
    }

    /// Returns a copy with an extra column appended.
    pub fn with_column(&self, spec: VariableSpec, column: &[f64]) -> Result<Self> {
        if column.len() != self.num_steps() {
            return Err(Error::Contract(alloc::format!(
                "column `{}` has {} values for {} rows",
                spec.name,
                column.len(),
                self.num_steps()
            )));
        }
        let v = self.num_variables();
        let mut values = Vec::with_capacity(self.values.len() + column.len());
        for (r, &c) in column.iter().enumerate() {
            values.extend_from_slice(&self.values[r * v..(r + 1) * v]);
            values.push(c);
        }
        let mut specs = self.specs.clone();
        specs.push(spec);
        Self::new(specs, values, self.timestamps.clone())
    }

    /// Replaces every value; shape must be unchanged.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.specs.clone(), values, self.timestamps.clone())
    }

    pub fn with_specs(&self, specs: Vec<VariableSpec>) -> Result<Self> {
        Self::new(specs, self.values.clone(), self.timestamps.clone())
    }

    /// Sets `observed_range` of every continuous variable to its min/max over `rows`.
    pub fn fit_observed_ranges(&self, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > self.num_steps() {
            return Err(Error::Contract(alloc::format!(
                "row range {rows:?} invalid for {} rows",
                self.num_steps()
            )));
        }
        let mut specs = self.specs.clone();
        for (j, spec) in specs.iter_mut().enumerate() {
            if spec.is_categorical() {
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for r in rows.clone() {
                let x = self.get(r, j);
                lo = lo.min(x);
                hi = hi.max(x);
            }
            spec.observed_range = Some(ValueRange::new(lo, hi));
        }
        self.with_specs(specs)
    }
}

pub(crate) fn role_indices(specs: &[VariableSpec], role: Role) -> Vec<usize> {
    specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.role == role)
        .map(|(i, _)| i)
        .collect()
}

/// Checks every dataset invariant; an empty result means the dataset is well formed.
pub fn validate_dataset(ds: &TimeSeriesDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let nv = ds.specs.len();
    let rows = ds.timestamps.len();
    if ds.values.len() != rows * nv {
        out.push(Violation::ShapeMismatch {
            expected: rows * nv,
            actual: ds.values.len(),
        });
        if nv == 0 || !ds.values.len().is_multiple_of(nv) {
            return out;
        }
        out.push(Violation::TimestampCount {
            rows: ds.values.len() / nv,
            timestamps: rows,
        });
        return out;
    }
    if !ds.specs.iter().any(|s| s.role == Role::Forecast) {
        out.push(Violation::NoForecastVariable);
    }
    for (i, s) in ds.specs.iter().enumerate() {
        if ds.specs[..i].iter().any(|p| p.name == s.name) {
            out.push(Violation::DuplicateName {
                variable: s.name.clone(),
            });
        }
        match s.kind {
            VariableKind::Categorical { cardinality: 0 } => out.push(Violation::ZeroCardinality {
                variable: s.name.clone(),
            }),
            VariableKind::Continuous => {
                if let Some(r) = s.observed_range {
                    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN bounds fail too
                    if !(r.min <= r.max) {
                        out.push(Violation::InvertedRange {
                            variable: s.name.clone(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    for r in 0..rows {
        for (j, s) in ds.specs.iter().enumerate() {
            let x = ds.values[r * nv + j];
            if !x.is_finite() {
                out.push(Violation::MissingValue {
                    variable: s.name.clone(),
                    row: r,
                });
                continue;
            }
            if let VariableKind::Categorical { cardinality } = s.kind {
                if cardinality > 0 && !is_valid_code(x, cardinality) {
                    out.push(Violation::InvalidCode {
                        variable: s.name.clone(),
                        row: r,
                        code: x,
                    });
                }
            }
        }
    }
    for r in 1..rows {
        if ds.timestamps[r] <= ds.timestamps[r - 1] {
            out.push(Violation::TimestampOrder { row: r });
        }
    }
    out
}

pub(crate) fn is_valid_code(x: f64, cardinality: usize) -> bool {
    x >= 0.0 && x < cardinality as f64 && libm::trunc(x) == x
}

/// One `(T + k + 1)`-row slice: rows `[0, T)` are history, the rest the forecast region.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    pub origin: usize,
    pub history: usize,
    pub k: usize,
    pub num_vars: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.history + self.k + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forecast_len(&self) -> usize {
        self.k + 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_vars..(i + 1) * self.num_vars]
    }
}

/// A mini-batch after mask substitution.
///
/// `inputs` is `(batch, T+k+1, num_vars)` with masked forecast cells replaced;
/// `targets` is `(batch, k+1, m)` ground truth over the forecast region;
/// `loss_mask` is `(batch, k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub loss_mask: Vec<bool>,
    pub mask_length: usize,
    pub batch: usize,
    pub history: usize,
    pub k: usize,
    pub num_vars: usize,
    pub num_forecast: usize,
}

impl MaskedBatch {
    pub fn window_len(&self) -> usize {
        self.history + self.k + 1
    }
}

pub fn timestamp_labels<I: IntoIterator<Item = usize>>(it: I) -> Vec<String> {
    it.into_iter().map(|i| alloc::format!("{i:08}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_var(n: usize) -> TimeSeriesDataset {
        let specs = vec![
            VariableSpec::categorical("dow", Role::Predictor, 7),
            VariableSpec::continuous("demand", Role::Forecast),
        ];
        let mut values = Vec::new();
        for i in 0..n {
            values.push((i % 7) as f64);
            values.push(100.0 + i as f64);
        }
        TimeSeriesDataset::new(specs, values, timestamp_labels(0..n)).unwrap()
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&two_var(10)).is_empty());
    }

    #[test]
    fn code_equal_to_cardinality_is_flagged() {
        let ds = two_var(10);
        let mut values = ds.values().to_vec();
        values[3 * 2] = 7.0;
        let bad = TimeSeriesDataset::new_unchecked(ds.specs().to_vec(), values, ds.timestamps().to_vec());
        let v = validate_dataset(&bad);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::InvalidCode { variable, .. } if variable == "dow"));
    }

    #[test]
    fn swapped_timestamps_flag_the_row() {
        let ds = two_var(10);
        let mut ts = ds.timestamps().to_vec();
        ts.swap(4, 5);
        let bad = TimeSeriesDataset::new_unchecked(ds.specs().to_vec(), ds.values().to_vec(), ts);
        assert_eq!(validate_dataset(&bad), vec![Violation::TimestampOrder { row: 5 }]);
    }

    #[test]
    fn missing_values_and_no_forecast_are_rejected() {
        let specs = vec![VariableSpec::continuous("t", Role::Predictor)];
        let err = TimeSeriesDataset::new(specs, vec![1.0, f64::NAN], timestamp_labels(0..2)).unwrap_err();
        match err {
            Error::InvalidDataset(v) => {
                assert!(v.contains(&Violation::NoForecastVariable));
                assert!(v.iter().any(|x| matches!(x, Violation::MissingValue { row: 1, .. })));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn with_column_appends() {
        let ds = two_var(3);
        let ds2 = ds
            .with_column(VariableSpec::continuous("temp", Role::Predictor), &[1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(ds2.num_variables(), 3);
        assert_eq!(ds2.row(1), &[1.0, 101.0, 2.0]);
    }

    #[test]
    fn observed_ranges_use_only_given_rows() {
        let ds = two_var(10).fit_observed_ranges(0..5).unwrap();
        assert_eq!(ds.specs()[1].observed_range, Some(ValueRange::new(100.0, 104.0)));
        assert_eq!(ds.specs()[0].observed_range, None);
    }
}
