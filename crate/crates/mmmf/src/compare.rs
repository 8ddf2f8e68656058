//! Method comparison tables grouped by base model.

use std::fmt::Write as _;
use std::path::Path;

use mmmf_core::metrics::{EvalReport, Metric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    /// Lowest mean in its base-model group and column.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub base_model: String,
    pub method: String,
    /// One entry per column; `None` where a variant lacks this row.
    pub cells: Vec<Option<Cell>>,
    /// Mean single-forecast inference time in milliseconds, from the first column.
    pub inference_ms: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metric: Metric,
    /// `None` pools every forecast step.
    pub horizon: Option<usize>,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn key(r: &EvalReport) -> (String, String) {
    (r.base_model.clone(), r.method_name().to_string())
}

/// One value column; `horizon` of `None` uses the pooled rows.
pub fn comparison_table(reports: &[EvalReport], metric: Metric, horizon: Option<usize>) -> ComparisonTable {
    paired_table(&[(metric.to_string(), reports)], metric, horizon)
}

/// One value column per named report set, e.g. a dataset with and without an extra predictor.
pub fn paired_table(variants: &[(String, &[EvalReport])], metric: Metric, horizon: Option<usize>) -> ComparisonTable {
    let mut keys: Vec<(String, String)> = Vec::new();
    for (_, reports) in variants {
        for r in reports.iter() {
            let k = key(r);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    // keep base models together, in first-seen order
    let groups: Vec<String> = keys.iter().fold(Vec::new(), |mut acc, (b, _)| {
        if !acc.contains(b) {
            acc.push(b.clone());
        }
        acc
    });
    keys.sort_by_key(|(b, _)| groups.iter().position(|g| g == b));

    let mut rows: Vec<TableRow> = keys
        .iter()
        .map(|(base, method)| {
            let found: Vec<Option<&EvalReport>> = variants
                .iter()
                .map(|(_, reports)| reports.iter().find(|r| key(r) == (base.clone(), method.clone())))
                .collect();
            let cells = found
                .iter()
                .map(|r| {
                    r.and_then(|r| r.get(horizon, None, metric)).map(|row| Cell {
                        mean: row.mean,
                        std: row.std,
                        best: false,
                    })
                })
                .collect();
            let inference_ms = found
                .first()
                .copied()
                .flatten()
                .and_then(|r| r.inference_time)
                .map(|t| (t.mean_seconds * 1e3, t.std_seconds * 1e3));
            TableRow {
                base_model: base.clone(),
                method: method.clone(),
                cells,
                inference_ms,
            }
        })
        .collect();

    for g in &groups {
        for c in 0..variants.len() {
            let best = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| &r.base_model == g)
                .filter_map(|(i, r)| r.cells[c].as_ref().map(|cell| (i, cell.mean)))
                .filter(|(_, m)| !m.is_nan())
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            if let Some(i) = best {
                if let Some(cell) = rows[i].cells[c].as_mut() {
                    cell.best = true;
                }
            }
        }
    }

    ComparisonTable {
        metric,
        horizon,
        columns: variants.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    }
}

fn fmt_cell(c: &Option<Cell>) -> String {
    match c {
        Some(c) => format!("{:.4} ± {:.4}{}", c.mean, c.std, if c.best { " *" } else { "" }),
        None => "-".into(),
    }
}

impl ComparisonTable {
    /// Plain-text table; `*` marks the best method within each base model.
    pub fn render(&self) -> String {
        let at = self
            .horizon
            .map_or_else(|| "all steps".to_string(), |h| format!("step {h}"));
        let mut header = vec!["Base model".to_string(), "Method".to_string()];
        header.extend(self.columns.iter().map(|c| format!("{c} ({} @ {at})", self.metric)));
        header.push("Inference time (ms)".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.base_model.clone(), r.method.clone()];
                line.extend(r.cells.iter().map(fmt_cell));
                line.push(r.inference_ms.map_or("-".into(), |(m, s)| format!("{m:.3} ± {s:.3}")));
                line
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|l| l[i].chars().count())
                    .chain([header[i].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cols: &[String], out: &mut String| {
            let cells: Vec<String> = cols
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&rule, &mut out);
        let mut last: Option<&str> = None;
        for (r, l) in self.rows.iter().zip(&body) {
            if last.is_some_and(|b| b != r.base_model) {
                out.push('\n');
            }
            last = Some(&r.base_model);
            line(l, &mut out);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
        let mut header = vec!["base_model".to_string(), "method".to_string()];
        for c in &self.columns {
            header.extend([format!("{c}_mean"), format!("{c}_std"), format!("{c}_best")]);
        }
        header.extend(["inference_ms_mean".to_string(), "inference_ms_std".to_string()]);
        w.write_record(&header).map_err(|e| Error::format(path, e))?;
        for r in &self.rows {
            let mut rec = vec![r.base_model.clone(), r.method.clone()];
            for c in &r.cells {
                match c {
                    Some(c) => rec.extend([c.mean.to_string(), c.std.to_string(), c.best.to_string()]),
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            match r.inference_ms {
                Some((m, s)) => rec.extend([m.to_string(), s.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
            w.write_record(&rec).map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
