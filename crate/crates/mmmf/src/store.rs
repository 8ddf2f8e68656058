//! Dataset files (CSV plus a JSON sidecar) and forecaster checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use mmmf_core::data::{TimeSeriesDataset, VariableSpec};
use mmmf_core::normalize::{Normalizer, Split};
use mmmf_core::train::TrainedForecaster;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contents of the `.meta.json` file written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub specs: Vec<VariableSpec>,
    /// Present when the CSV holds normalized values.
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
    #[serde(default)]
    pub split: Option<Split>,
    /// Rows from here on are held out for testing.
    #[serde(default)]
    pub test_start: Option<usize>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Writes `ds` as CSV (timestamp column first) and its sidecar.
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_dataset(path: &Path, ds: &TimeSeriesDataset, meta: &DatasetMeta) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.specs().iter().map(|s| s.name.clone()));
    w.write_record(&header).map_err(|e| Error::format(path, e))?;
    for (i, ts) in ds.timestamps().iter().enumerate() {
        let mut rec = vec![ts.clone()];
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), meta)
}

/// Reads a dataset written by [`write_dataset`], values as stored.
pub fn read_dataset(path: &Path) -> Result<(TimeSeriesDataset, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&sidecar_path(path))?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = rdr.headers().map_err(|e| Error::format(path, e))?.clone();
    let names: Vec<&str> = header.iter().skip(1).collect();
    let expected: Vec<&str> = meta.specs.iter().map(|s| s.name.as_str()).collect();
    if names != expected {
        return Err(Error::Schema(format!(
            "{}: header {names:?} does not match sidecar variables {expected:?}",
            path.display()
        )));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Row {
            line,
            message: e.to_string(),
        })?;
        timestamps.push(rec.get(0).unwrap_or("").to_string());
        for (cell, name) in rec.iter().skip(1).zip(&expected) {
            values.push(cell.parse::<f64>().map_err(|_| Error::Row {
                line,
                message: format!("column `{name}`: cannot parse `{cell}` as a number"),
            })?);
        }
    }
    let ds = TimeSeriesDataset::new(meta.specs.clone(), values, timestamps)?;
    Ok((ds, meta))
}

/// Reads a dataset and undoes its normalization, if any.
pub fn read_raw_dataset(path: &Path) -> Result<(TimeSeriesDataset, DatasetMeta)> {
    let (ds, meta) = read_dataset(path)?;
    let raw = match &meta.normalizer {
        Some(n) => n.invert(&ds)?,
        None => ds,
    };
    Ok((raw, meta))
}

const CHECKPOINT_FORMAT: &str = "mmmf-forecaster";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    forecaster: T,
}

pub fn save_checkpoint(path: &Path, f: &TrainedForecaster) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        forecaster: f,
    };
    // write-then-rename so an interrupted run never leaves a truncated checkpoint
    let tmp = path.with_extension("json.partial");
    write_json(&tmp, &ck)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedForecaster> {
    let ck: Checkpoint<serde_json::Value> = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint {} v{}", ck.format, ck.version),
        ));
    }
    serde_json::from_value(ck.forecaster).map_err(|e| Error::format(path, e))
}
