//! Test-period evaluation, inference timing and report files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mmmf_core::data::TimeSeriesDataset;
use mmmf_core::forecast::{collect_forecasts, forecast, required_context, ForecastRequest, InferenceOptions};
use mmmf_core::metrics::{mean_std, EvalReport, Metric, TimingSummary};
use mmmf_core::train::TrainedForecaster;

use crate::error::{Error, Result};

/// Requests per forward pass when scoring a test period.
pub const EVAL_CHUNK: usize = 256;

/// Every forecast start `s` with `test_start <= s` and `s + horizon <= num_steps`.
pub fn test_starts(num_steps: usize, test_start: usize, horizon: usize) -> Vec<usize> {
    (test_start..(num_steps + 1).saturating_sub(horizon)).collect()
}

/// Wall time of `repeats` single-request forecasts after one discarded warm-up run.
pub fn time_inference(
    f: &TrainedForecaster,
    request: &ForecastRequest,
    opts: &InferenceOptions,
    repeats: usize,
) -> Result<TimingSummary> {
    let batch = std::slice::from_ref(request);
    forecast(f, batch, opts)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let out = forecast(f, batch, opts)?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let (mean, std) = mean_std(&times);
    Ok(TimingSummary {
        mean_seconds: mean,
        std_seconds: std,
        repeats,
    })
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub horizon: usize,
    pub metrics: Vec<Metric>,
    pub inference: InferenceOptions,
    /// Zero skips timing.
    pub timing_repeats: usize,
}

/// Scores one forecaster per seed on the raw-scale `raw` dataset from every start in `starts`.
///
/// Timing uses the first seed's forecaster and the first start.
pub fn evaluate(
    base_model: &str,
    runs: &[(u64, TrainedForecaster)],
    raw: &TimeSeriesDataset,
    starts: &[usize],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let (_, first) = runs
        .first()
        .ok_or_else(|| Error::Config("no trained forecasters to evaluate".into()))?;
    if starts.is_empty() {
        return Err(Error::Config("no forecast starts in the test period".into()));
    }
    let sets = runs
        .iter()
        .map(|(seed, f)| {
            collect_forecasts(f, raw, starts, settings.horizon, &settings.inference, EVAL_CHUNK).map(|s| (*seed, s))
        })
        .collect::<mmmf_core::Result<Vec<_>>>()?;
    let mut report = EvalReport::from_runs(first.formulation, base_model, &sets, &settings.metrics)?;
    if settings.timing_repeats > 0 {
        let context = required_context(first, settings.horizon)?;
        let request = ForecastRequest::from_dataset(raw, starts[0], context, settings.horizon)?;
        report.inference_time = Some(time_inference(
            first,
            &request,
            &settings.inference,
            settings.timing_repeats,
        )?);
    }
    Ok(report)
}

fn opt_label<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "all".to_string(), T::to_string)
}

/// Long-format CSV: `method, base_model, horizon, variable, metric, mean, std`.
///
/// Pooled rows carry `all` in the horizon or variable column.
pub fn write_report_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["method", "base_model", "horizon", "variable", "metric", "mean", "std"])
        .map_err(|e| Error::format(path, e))?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.method_name().to_string(),
                r.base_model.clone(),
                opt_label(&row.horizon),
                opt_label(&row.variable),
                row.metric.to_string(),
                row.mean.to_string(),
                row.std.to_string(),
            ])
            .map_err(|e| Error::format(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format(path, e))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}
