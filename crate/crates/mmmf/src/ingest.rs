//! CSV loading, calendar features, daily downsampling and monthly broadcast.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use mmmf_core::data::{Role, TimeSeriesDataset, VariableSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// One declared CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub role: Role,
    #[serde(default = "continuous")]
    pub kind: ColumnKind,
    /// Required for categorical columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
}

fn continuous() -> ColumnKind {
    ColumnKind::Continuous
}

impl ColumnDecl {
    pub fn to_spec(&self) -> Result<VariableSpec> {
        match (self.kind, self.cardinality) {
            (ColumnKind::Continuous, _) => Ok(VariableSpec::continuous(&self.name, self.role)),
            (ColumnKind::Categorical, Some(c)) => Ok(VariableSpec::categorical(&self.name, self.role, c)),
            (ColumnKind::Categorical, None) => Err(Error::Schema(format!(
                "categorical column `{}` needs a cardinality",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// Name of the timestamp column.
    #[serde(default = "timestamp")]
    pub timestamp: String,
    pub columns: Vec<ColumnDecl>,
}

fn timestamp() -> String {
    "timestamp".into()
}

const DATE: &str = "%Y-%m-%d";
const DATETIME: &str = "%Y-%m-%d %H:%M:%S";

/// Parses `YYYY-MM-DD`, optionally followed by ` HH:MM[:SS]` or `THH:MM[:SS]`.
/// The flag is true when a time of day was present.
pub fn parse_timestamp(s: &str) -> Option<(NaiveDateTime, bool)> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, DATE) {
        return Some((d.and_hms_opt(0, 0, 0)?, false));
    }
    [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    .map(|t| (t, true))
}

fn parse_all(ds: &TimeSeriesDataset) -> Result<Vec<NaiveDateTime>> {
    ds.timestamps()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            parse_timestamp(s).map(|(t, _)| t).ok_or_else(|| Error::Row {
                line: i + 2,
                message: format!("unparseable timestamp `{s}`"),
            })
        })
        .collect()
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<TimeSeriesDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a header-first CSV; undeclared columns are ignored and rows are sorted by time.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<TimeSeriesDataset> {
    let specs = schema
        .columns
        .iter()
        .map(ColumnDecl::to_spec)
        .collect::<Result<Vec<_>>>()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let ts_col = find(&schema.timestamp)?;
    let cols = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(NaiveDateTime, usize, Vec<f64>)> = Vec::new();
    let mut any_time = false;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Row {
            line,
            message: e.to_string(),
        })?;
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let (ts, has_time) = parse_timestamp(raw_ts).ok_or_else(|| Error::Row {
            line,
            message: format!("unparseable timestamp `{raw_ts}`"),
        })?;
        any_time |= has_time;
        let values = cols
            .iter()
            .zip(&schema.columns)
            .map(|(&c, decl)| {
                let cell = rec.get(c).unwrap_or("");
                cell.parse::<f64>().map_err(|_| Error::Row {
                    line,
                    message: format!("column `{}`: cannot parse `{cell}` as a number", decl.name),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, line, values));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateTimestamp {
            line: w[0].1.max(w[1].1),
            timestamp: w[1].0.to_string(),
        });
    }
    let fmt = if any_time { DATETIME } else { DATE };
    let timestamps = rows.iter().map(|r| r.0.format(fmt).to_string()).collect();
    let values = rows.into_iter().flat_map(|r| r.2).collect();
    Ok(TimeSeriesDataset::new(specs, values, timestamps)?)
}

/// One row per calendar date: continuous variables take the day's maximum,
/// categorical ones the value of the day's first row.
pub fn downsample_daily_max(ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
    let times = parse_all(ds)?;
    let nv = ds.num_variables();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, t) in times.iter().enumerate() {
        let d = t.date();
        let row = ds.row(i);
        if dates.last() == Some(&d) {
            let acc = &mut values[(dates.len() - 1) * nv..];
            for (j, spec) in ds.specs().iter().enumerate() {
                if !spec.is_categorical() {
                    acc[j] = acc[j].max(row[j]);
                }
            }
        } else {
            if let Some(prev) = dates.last() {
                if let Some(missing) = prev.succ_opt().filter(|next| *next != d) {
                    return Err(Error::Gap {
                        date: missing.format(DATE).to_string(),
                    });
                }
            }
            dates.push(d);
            values.extend_from_slice(row);
        }
    }
    let timestamps = dates.iter().map(|d| d.format(DATE).to_string()).collect();
    Ok(TimeSeriesDataset::new(ds.specs().to_vec(), values, timestamps)?)
}

/// Appends `month` (12), `day_of_month` (31) and `day_of_week` (7, Monday = 0)
/// categorical predictors, all coded from 0.
pub fn derive_calendar(ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
    let times = parse_all(ds)?;
    let month: Vec<f64> = times.iter().map(|t| t.month0() as f64).collect();
    let day: Vec<f64> = times.iter().map(|t| t.day0() as f64).collect();
    let dow: Vec<f64> = times
        .iter()
        .map(|t| t.weekday().num_days_from_monday() as f64)
        .collect();
    let out = ds
        .with_column(VariableSpec::categorical("month", Role::Predictor, 12), &month)?
        .with_column(VariableSpec::categorical("day_of_month", Role::Predictor, 31), &day)?
        .with_column(VariableSpec::categorical("day_of_week", Role::Predictor, 7), &dow)?;
    Ok(out)
}

/// Parses a `YYYY-MM` (or full date) month label.
pub fn parse_month(label: &str) -> Option<(i32, u32)> {
    let s = label.trim();
    NaiveDate::parse_from_str(&format!("{s}-01"), DATE)
        .or_else(|_| NaiveDate::parse_from_str(s, DATE))
        .ok()
        .map(|d| (d.year(), d.month()))
}

fn month_name(m: u32) -> &'static str {
    const NAMES: [&str; 12] = [
        "January",
        "February",
        "March",
        "April",
        "May",
        "June",
        "July",
        "August",
        "September",
        "October",
        "November",
        "December",
    ];
    NAMES[(m - 1) as usize]
}

/// Adds a continuous predictor `name` holding each row's monthly value.
pub fn broadcast_monthly(ds: &TimeSeriesDataset, monthly: &[(String, f64)], name: &str) -> Result<TimeSeriesDataset> {
    let mut table: HashMap<(i32, u32), f64> = HashMap::new();
    for (label, v) in monthly {
        let key = parse_month(label).ok_or_else(|| Error::Schema(format!("bad month label `{label}`")))?;
        if table.insert(key, *v).is_some() {
            return Err(Error::Schema(format!("month `{label}` listed twice")));
        }
    }
    let times = parse_all(ds)?;
    let column = times
        .iter()
        .map(|t| {
            let key = (t.year(), t.month());
            table.get(&key).copied().ok_or_else(|| Error::Coverage {
                month: format!("{} {:04}-{:02}", month_name(key.1), key.0, key.1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ds.with_column(VariableSpec::continuous(name, Role::Predictor), &column)?)
}

/// Reads a two-column `month,value` CSV.
pub fn load_monthly_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Row {
            line,
            message: e.to_string(),
        })?;
        let (Some(m), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Row {
                line,
                message: "expected `month,value`".into(),
            });
        };
        let v = v.parse().map_err(|_| Error::Row {
            line,
            message: format!("cannot parse `{v}` as a number"),
        })?;
        out.push((m.to_string(), v));
    }
    Ok(out)
}
