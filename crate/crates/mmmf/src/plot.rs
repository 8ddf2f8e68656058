//! SVG figures: per-step error curves with std bands, and per-variable bars.

use std::path::Path;

use mmmf_core::metrics::{EvalReport, Metric};
use plotters::prelude::*;

use crate::error::{Error, Result};

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Reports grouped by base model, in first-seen order.
fn by_base_model(reports: &[EvalReport]) -> Vec<(String, Vec<&EvalReport>)> {
    let mut groups: Vec<(String, Vec<&EvalReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(b, _)| *b == r.base_model) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.base_model.clone(), vec![r])),
        }
    }
    groups
}

/// One panel per base model with a mean curve and a mean ± std band per method.
/// Returns the number of panels drawn.
pub fn plot_horizon_curves(reports: &[EvalReport], metric: Metric, path: &Path) -> Result<usize> {
    let horizon = reports
        .first()
        .ok_or_else(|| Error::Plot("no reports to plot".into()))?
        .horizon;
    if let Some(r) = reports.iter().find(|r| r.horizon != horizon) {
        return Err(Error::Plot(format!(
            "mismatched horizons: {} has {}, expected {horizon}",
            r.method_name(),
            r.horizon
        )));
    }
    let groups = by_base_model(reports);
    let curves: Vec<Vec<Vec<(f64, f64)>>> = groups
        .iter()
        .map(|(_, rs)| {
            rs.iter()
                .map(|r| r.curve(metric))
                .collect::<mmmf_core::Result<Vec<_>>>()
        })
        .collect::<mmmf_core::Result<_>>()?;
    let top = curves
        .iter()
        .flatten()
        .flatten()
        .map(|(m, s)| m + s)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;

    let width = 480 * groups.len() as u32;
    let root = SVGBackend::new(path, (width, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, groups.len()));
    for ((panel, (base, rs)), cs) in panels.iter().zip(&groups).zip(&curves) {
        let mut chart = ChartBuilder::on(panel)
            .caption(base, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(60)
            .build_cartesian_2d(0.5f64..horizon as f64 + 0.5, 0.0f64..top)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("forecast step")
            .y_desc(metric.name())
            .draw()
            .map_err(plot_err)?;
        for (i, (r, curve)) in rs.iter().zip(cs).enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let steps = (1..horizon + 1).map(|h| h as f64);
            let upper = steps.clone().zip(curve).map(|(x, (m, s))| (x, m + s));
            let mut band: Vec<(f64, f64)> = steps
                .clone()
                .zip(curve)
                .map(|(x, (m, s))| (x, (m - s).max(0.0)))
                .collect();
            band.reverse();
            let band: Vec<(f64, f64)> = upper.chain(band).collect();
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
                .map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(
                    steps.zip(curve).map(|(x, (m, _))| (x, *m)),
                    color.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(r.method_name())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(groups.len())
}

/// Per-variable bars of the metric at forecast step `step`, one panel per base model.
pub fn plot_variable_bars(reports: &[EvalReport], metric: Metric, step: usize, path: &Path) -> Result<usize> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Plot("no reports to plot".into()))?;
    let names = first.variables.clone();
    if let Some(r) = reports.iter().find(|r| r.variables != names) {
        return Err(Error::Plot(format!("{} reports different variables", r.method_name())));
    }
    let groups = by_base_model(reports);
    let mut values: Vec<Vec<Vec<(f64, f64)>>> = Vec::new();
    for (_, rs) in &groups {
        let mut per_method = Vec::new();
        for r in rs {
            let vals = names
                .iter()
                .map(|v| {
                    r.get(Some(step), Some(v), metric)
                        .map(|row| (row.mean, row.std))
                        .ok_or_else(|| {
                            Error::Plot(format!("{} has no {metric} at step {step} for {v}", r.method_name()))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            per_method.push(vals);
        }
        values.push(per_method);
    }
    let top = values
        .iter()
        .flatten()
        .flatten()
        .map(|(m, s)| m + s)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let nv = names.len();
    let width = (120 + 60 * nv as u32).max(400) * groups.len() as u32;
    let root = SVGBackend::new(path, (width, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, groups.len()));
    for ((panel, (base, rs)), vals) in panels.iter().zip(&groups).zip(&values) {
        let label_names = names.clone();
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("{base}: step {step}"), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(60)
            .build_cartesian_2d(-0.5f64..nv as f64 - 0.5, 0.0f64..top)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(nv + 1)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    label_names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(metric.name())
            .draw()
            .map_err(plot_err)?;
        let n = rs.len() as f64;
        let bar = 0.8 / n;
        for (i, (r, v)) in rs.iter().zip(vals).enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let x0 = |j: usize| j as f64 - 0.4 + bar * i as f64;
            chart
                .draw_series(
                    v.iter()
                        .enumerate()
                        .map(|(j, (m, _))| Rectangle::new([(x0(j), 0.0), (x0(j) + bar, *m)], color.filled())),
                )
                .map_err(plot_err)?
                .label(r.method_name())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], color.filled()));
            chart
                .draw_series(v.iter().enumerate().map(|(j, (m, s))| {
                    let xc = x0(j) + bar / 2.0;
                    PathElement::new(vec![(xc, (m - s).max(0.0)), (xc, m + s)], BLACK)
                }))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(groups.len())
}
