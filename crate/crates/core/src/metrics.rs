//! Error metrics and multi-seed aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastSet;
use crate::train::Formulation;

/// Smallest `|truth|` accepted as a MAPE denominator.
pub const MAPE_GUARD: f64 = 1e-8;

fn check_shapes(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: (truth.len(), 1),
            actual: (pred.len(), 1),
        });
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut sum = 0.0;
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if t.abs() < MAPE_GUARD {
            return Err(Error::GuardedDenominator {
                index: i,
                guard: MAPE_GUARD,
            });
        }
        sum += ((p - t) / t).abs();
    }
    Ok(100.0 * sum / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Mape,
    Mse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mape => "MAPE",
            Metric::Mse => "MSE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Metric::Mape, Metric::Mse]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn compute(self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        match self {
            Metric::Mape => mape(pred, truth),
            Metric::Mse => mse(pred, truth),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean and population standard deviation (one value gives std 0).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Metric over the selected cells, averaging per-variable values when `var` is `None`.
pub fn set_metric(set: &ForecastSet, metric: Metric, step: Option<usize>, var: Option<usize>) -> Result<f64> {
    match var {
        Some(v) => {
            let (p, t) = set.cells(step, Some(v));
            metric.compute(&p, &t)
        }
        None => {
            let m = set.variables.len();
            let mut sum = 0.0;
            for v in 0..m {
                let (p, t) = set.cells(step, Some(v));
                sum += metric.compute(&p, &t)?;
            }
            Ok(sum / m as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// 1-based forecast step; `None` pools every step.
    pub horizon: Option<usize>,
    /// `None` is the average over variables.
    pub variable: Option<String>,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    /// One value per seed, in seed order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub repeats: usize,
}

/// Per-horizon, per-variable metrics aggregated over seeds for one method and base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Formulation,
    /// Display name when it differs from the formulation, e.g. a mask-length variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub base_model: String,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub variables: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub inference_time: Option<TimingSummary>,
}

impl EvalReport {
    /// `runs` pairs each seed with its forecasts; all sets must share horizon and variables.
    pub fn from_runs(
        method: Formulation,
        base_model: &str,
        runs: &[(u64, ForecastSet)],
        metrics: &[Metric],
    ) -> Result<Self> {
        let (_, first) = runs
            .first()
            .ok_or_else(|| Error::Contract("no runs to aggregate".into()))?;
        if runs
            .iter()
            .any(|(_, s)| s.horizon != first.horizon || s.variables != first.variables)
        {
            return Err(Error::Contract("runs disagree on horizon or variables".into()));
        }
        let vars: Vec<Option<usize>> = (0..first.variables.len()).map(Some).chain([None]).collect();
        let steps: Vec<Option<usize>> = (0..first.horizon).map(Some).chain([None]).collect();
        let mut rows = Vec::new();
        for &metric in metrics {
            for &step in &steps {
                for &var in &vars {
                    let values = runs
                        .iter()
                        .map(|(_, s)| set_metric(s, metric, step, var))
                        .collect::<Result<Vec<_>>>()?;
                    let (mean, std) = mean_std(&values);
                    rows.push(ReportRow {
                        horizon: step.map(|s| s + 1),
                        variable: var.map(|v| first.variables[v].clone()),
                        metric,
                        mean,
                        std,
                        values,
                    });
                }
            }
        }
        Ok(Self {
            method,
            label: None,
            base_model: base_model.into(),
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            horizon: first.horizon,
            variables: first.variables.clone(),
            rows,
            inference_time: None,
        })
    }

    pub fn method_name(&self) -> &str {
        self.label.as_deref().unwrap_or(self.method.name())
    }

    /// Looks up a row; `horizon` and `variable` of `None` select the pooled rows.
    pub fn get(&self, horizon: Option<usize>, variable: Option<&str>, metric: Metric) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.horizon == horizon && r.variable.as_deref() == variable && r.metric == metric)
    }

    /// The mean metric at each step `1..=horizon`, averaged over variables.
    pub fn curve(&self, metric: Metric) -> Result<Vec<(f64, f64)>> {
        (1..=self.horizon)
            .map(|h| {
                self.get(Some(h), None, metric)
                    .map(|r| (r.mean, r.std))
                    .ok_or_else(|| Error::Contract(format!("report has no {metric} at step {h}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[110.0, 180.0], &[100.0, 200.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            mape(&[1.0, 1.0], &[1.0, 0.0]),
            Err(Error::GuardedDenominator { index: 1, .. })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn std_is_population() {
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }

    fn set(preds: Vec<f64>, truths: Vec<f64>, h: usize, m: usize) -> ForecastSet {
        let n = preds.len() / (h * m);
        ForecastSet {
            horizon: h,
            variables: (0..m).map(|v| format!("v{v}")).collect(),
            starts: (0..n).collect(),
            predictions: preds,
            truths,
        }
    }

    #[test]
    fn report_rows_per_step_and_variable() {
        // two windows, horizon 2, two variables
        let truth = vec![10.0, 20.0, 10.0, 20.0, 10.0, 20.0, 10.0, 20.0];
        let pred = vec![11.0, 20.0, 12.0, 22.0, 9.0, 20.0, 10.0, 18.0];
        let s = set(pred, truth, 2, 2);
        let r = EvalReport::from_runs(Formulation::Mmmf, "lstm", &[(0, s.clone()), (1, s)], &[Metric::Mape]).unwrap();
        let step1_v0 = r.get(Some(1), Some("v0"), Metric::Mape).unwrap();
        assert!((step1_v0.mean - 10.0).abs() < 1e-12);
        assert_eq!(step1_v0.std, 0.0);
        let step2 = r.get(Some(2), None, Metric::Mape).unwrap();
        // v0: (20% + 0%)/2 = 10, v1: (10% + 10%)/2 = 10
        assert!((step2.mean - 10.0).abs() < 1e-12);
        let v1 = r.get(None, Some("v1"), Metric::Mape).unwrap();
        assert!((v1.mean - 5.0).abs() < 1e-12);
        assert_eq!(r.curve(Metric::Mape).unwrap().len(), 2);
        assert_eq!(r.rows.len(), 3 * 3);
    }

    #[test]
    fn std_over_seeds() {
        let a = set(vec![1.0], vec![0.0], 1, 1);
        let b = set(vec![3.0], vec![0.0], 1, 1);
        let r = EvalReport::from_runs(Formulation::Rsf, "lstm", &[(0, a), (1, b)], &[Metric::Mse]).unwrap();
        let row = r.get(Some(1), None, Metric::Mse).unwrap();
        assert_eq!((row.mean, row.std), (5.0, 4.0));
        assert_eq!(row.values, vec![1.0, 9.0]);
    }

    proptest! {
        #[test]
        fn mse_is_permutation_invariant(
            cells in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40),
            rot in 0usize..40,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = cells.iter().copied().unzip();
            let mut q = cells.clone();
            let len = q.len();
            q.rotate_left(rot % len);
            q.reverse();
            let (p2, t2): (Vec<f64>, Vec<f64>) = q.into_iter().unzip();
            let a = mse(&p, &t).unwrap();
            let b = mse(&p2, &t2).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn mape_is_non_negative(
            cells in proptest::collection::vec((-1e3f64..1e3, 1.0f64..1e3), 1..40),
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
            let v = mape(&p, &t).unwrap();
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }
}
