//! Experiment configuration and orchestration: train every
//! (formulation, base model, seed) cell, evaluate, and tabulate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mmmf_core::data::TimeSeriesDataset;
use mmmf_core::forecast::InferenceOptions;
use mmmf_core::metrics::{EvalReport, Metric};
use mmmf_core::nn::HyperParams;
use mmmf_core::normalize::{chrono_split, NormalizationMethod, Split};
use mmmf_core::synthetic::{generate, SyntheticConfig};
use mmmf_core::train::{build_network, train, Formulation, PreparedData, TrainConfig, TrainedForecaster};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compare::{comparison_table, ComparisonTable};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, save_report, test_starts, write_report_csv, EvalSettings};
use crate::store::{load_checkpoint, read_raw_dataset, save_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// A dataset CSV with its sidecar.
    Path(PathBuf),
}

/// A block of the experiment grid: every listed formulation on every listed base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub formulations: Vec<Formulation>,
    pub base_models: Vec<String>,
    /// Method name in reports, e.g. `MMMF-1s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mask_length: Option<usize>,
}

fn default_grid() -> Vec<GridEntry> {
    vec![
        GridEntry {
            formulations: vec![Formulation::Mmmf, Formulation::Rsf, Formulation::Dmf],
            base_models: vec!["recurrent".into(), "temporal-conv".into(), "attention-encoder".into()],
            label: None,
            max_mask_length: None,
        },
        GridEntry {
            formulations: vec![Formulation::Sbf],
            base_models: vec!["feed-forward".into()],
            label: None,
            max_mask_length: None,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub out: PathBuf,
    pub dataset: DatasetSource,
    pub grid: Vec<GridEntry>,
    /// Hyperparameter overrides, at most one per architecture.
    pub models: Vec<HyperParams>,
    /// Shared training settings; formulation and seed are set per cell.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Evaluation horizon; `None` means `k + 1`.
    pub horizon: Option<usize>,
    pub metrics: Vec<Metric>,
    /// Step reported in the comparison table; `None` pools all steps.
    pub table_horizon: Option<usize>,
    pub normalization: NormalizationMethod,
    /// Trailing share of rows held out for testing.
    pub test_fraction: f64,
    /// Share of the remaining rows used for training; the rest validates.
    pub train_fraction: f64,
    pub inference: InferenceOptions,
    pub timing_repeats: usize,
    /// Cells trained at once; `None` uses every available core.
    pub parallelism: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            out: PathBuf::from("runs"),
            dataset: DatasetSource::Synthetic(SyntheticConfig::default()),
            grid: default_grid(),
            models: Vec::new(),
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            horizon: None,
            metrics: vec![Metric::Mape, Metric::Mse],
            table_horizon: None,
            normalization: NormalizationMethod::Zscore,
            test_fraction: 0.2,
            train_fraction: 0.8,
            inference: InferenceOptions::default(),
            timing_repeats: 100,
            parallelism: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(self.train.k + 1)
    }

    /// Hyperparameters for a base model name or alias.
    pub fn hyper_params(&self, base_model: &str) -> Result<HyperParams> {
        let default = HyperParams::default_for(base_model)
            .ok_or_else(|| Error::Config(format!("unknown base model `{base_model}`")))?;
        Ok(self
            .models
            .iter()
            .find(|h| h.name() == default.name())
            .cloned()
            .unwrap_or(default))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("no seeds".into());
        }
        if self
            .grid
            .iter()
            .all(|g| g.formulations.is_empty() || g.base_models.is_empty())
        {
            return fail("empty experiment grid".into());
        }
        if self.metrics.is_empty() {
            return fail("no metrics".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test fraction {} outside (0, 1)", self.test_fraction));
        }
        let mut names: Vec<&str> = self.models.iter().map(|h| h.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("more than one hyperparameter block for one architecture".into());
        }
        if self.horizon() == 0 || self.horizon() > self.train.k + 1 {
            return fail(format!("horizon {} outside [1, {}]", self.horizon(), self.train.k + 1));
        }
        if self.table_horizon.is_some_and(|h| h == 0 || h > self.horizon()) {
            return fail(format!("table horizon outside [1, {}]", self.horizon()));
        }
        for cell in self.cells()? {
            cell.train.validate()?;
        }
        Ok(())
    }

    /// Every grid cell in grid order, seeds innermost.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        let mut out = Vec::new();
        for g in &self.grid {
            for &formulation in &g.formulations {
                for base in &g.base_models {
                    let hyper = self.hyper_params(base)?;
                    for &seed in &self.seeds {
                        let mut train = self.train.clone();
                        train.formulation = formulation;
                        train.seed = seed;
                        if g.max_mask_length.is_some() {
                            train.max_mask_length = g.max_mask_length;
                        }
                        out.push(CellSpec {
                            formulation,
                            base_model: hyper.name().to_string(),
                            label: g.label.clone(),
                            seed,
                            hyper: hyper.clone(),
                            train,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub formulation: Formulation,
    pub base_model: String,
    pub label: Option<String>,
    pub seed: u64,
    pub hyper: HyperParams,
    pub train: TrainConfig,
}

impl CellSpec {
    pub fn method_name(&self) -> &str {
        self.label.as_deref().unwrap_or(self.formulation.name())
    }

    /// Hex digest of everything that determines the trained parameters.
    pub fn id(&self, data: &ExperimentData, normalization: NormalizationMethod) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            dataset: &'a str,
            split: &'a Split,
            normalization: NormalizationMethod,
            hyper: &'a HyperParams,
            train: &'a TrainConfig,
        }
        let json = serde_json::to_string(&Identity {
            dataset: &data.fingerprint,
            split: &data.split,
            normalization,
            hyper: &self.hyper,
            train: &self.train,
        })
        .expect("cell identity serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// The raw dataset with its split and held-out test rows.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub raw: TimeSeriesDataset,
    pub split: Split,
    pub test_start: usize,
    /// Hex digest of the dataset contents.
    pub fingerprint: String,
}

fn fingerprint(ds: &TimeSeriesDataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(ds.specs()).expect("specs serialize"));
    for t in ds.timestamps() {
        h.update(t.as_bytes());
        h.update([0]);
    }
    for v in ds.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Loads or generates the dataset and fixes the chronological split.
pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let window = config.train.history + config.train.k + 1;
    let (raw, split, test_start) = match &config.dataset {
        DatasetSource::Synthetic(s) => {
            let raw = generate(s)?;
            let n = raw.num_steps();
            let test_start = n - (config.test_fraction * n as f64).floor() as usize;
            let split = chrono_split(test_start, config.train_fraction, window)?;
            (raw, split, test_start)
        }
        DatasetSource::Path(p) => {
            let (raw, meta) = read_raw_dataset(p)?;
            match meta.split {
                Some(split) => {
                    let test_start = meta.test_start.unwrap_or(split.validation.end);
                    if split.train.len() < window {
                        return Err(mmmf_core::Error::InsufficientData {
                            required: window,
                            available: split.train.len(),
                        }
                        .into());
                    }
                    (raw, split, test_start)
                }
                None => {
                    let n = raw.num_steps();
                    let test_start = n - (config.test_fraction * n as f64).floor() as usize;
                    let split = chrono_split(test_start, config.train_fraction, window)?;
                    (raw, split, test_start)
                }
            }
        }
    };
    Ok(ExperimentData {
        fingerprint: fingerprint(&raw),
        raw,
        split,
        test_start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Trained,
    /// A checkpoint already existed.
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    pub method: String,
    pub base_model: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Process exit code class of the error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<i32>,
    /// Training time of this invocation; zero when reused.
    pub train_seconds: f64,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";

pub fn cell_dir(config: &ExperimentConfig, id: &str) -> PathBuf {
    config.out.join("cells").join(id)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_cell(cell: &CellSpec, data: &PreparedData, dir: &Path) -> Result<TrainedForecaster> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(
        &dir.join("cell.json"),
        &serde_json::to_string_pretty(cell).map_err(|e| Error::format(dir, e))?,
    )?;
    let log_path = dir.join(EPOCH_LOG_FILE);
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log, "epoch,train_loss,val_loss,wall_seconds").map_err(|e| Error::io(&log_path, e))?;
    let start = Instant::now();
    let mut log_err = None;
    let network = build_network(&cell.hyper, data.dataset.specs(), &cell.train)?;
    let result = train(network, data, &cell.train, &mut |s| {
        let val = s.val_loss.map_or(String::new(), |v| v.to_string());
        let line = writeln!(
            log,
            "{},{},{},{}",
            s.epoch,
            s.train_loss,
            val,
            start.elapsed().as_secs_f64()
        )
        .and_then(|_| log.flush());
        if let Err(e) = line {
            log_err.get_or_insert(e);
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let trained = result?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &trained)?;
    Ok(trained)
}

/// Progress messages from a running experiment.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// Trains every cell without a checkpoint. Failures are recorded, not raised.
pub fn train_cells(
    config: &ExperimentConfig,
    data: &ExperimentData,
    progress: Progress<'_>,
) -> Result<Vec<CellRecord>> {
    config.validate()?;
    let prepared = PreparedData::new(
        &data.raw,
        data.split.train.clone(),
        data.split.validation.clone(),
        config.normalization,
    )?;
    let cells = config.cells()?;
    let records: Mutex<Vec<Option<CellRecord>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = config
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, cells.len().max(1));

    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(cell) = cells.get(i) else { break };
        let id = cell.id(data, config.normalization);
        let dir = cell_dir(config, &id);
        let ck = dir.join(CHECKPOINT_FILE);
        let name = format!("{} / {} / seed {}", cell.method_name(), cell.base_model, cell.seed);
        let start = Instant::now();
        let (status, error) = if ck.exists() && load_checkpoint(&ck).is_ok() {
            progress(&format!("{name}: checkpoint found, skipping"));
            (CellStatus::Reused, None::<Error>)
        } else {
            progress(&format!("{name}: training"));
            match train_cell(cell, &prepared, &dir) {
                Ok(_) => {
                    progress(&format!("{name}: done in {:.1}s", start.elapsed().as_secs_f64()));
                    (CellStatus::Trained, None)
                }
                Err(e) => {
                    progress(&format!("{name}: failed: {e}"));
                    (CellStatus::Failed, Some(e))
                }
            }
        };
        let record = CellRecord {
            id,
            method: cell.method_name().to_string(),
            base_model: cell.base_model.clone(),
            seed: cell.seed,
            status,
            error_code: error.as_ref().map(Error::exit_code),
            error: error.map(|e| e.to_string()),
            train_seconds: if status == CellStatus::Reused {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
            dir,
        };
        records.lock().expect("record lock")[i] = Some(record);
    };
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });
    let records: Vec<CellRecord> = records
        .into_inner()
        .expect("record lock")
        .into_iter()
        .map(|r| r.expect("every cell recorded"))
        .collect();
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let manifest = Manifest {
        config: config.clone(),
        cells: records.clone(),
    };
    write_text(
        &config.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&config.out, e))?,
    )?;
    Ok(records)
}

/// Reports, comparison table and per-group evaluation errors.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<EvalReport>,
    pub table: ComparisonTable,
    /// `(method, base model, error)` for groups that could not be evaluated.
    pub failures: Vec<(String, String, String)>,
}

/// Prefixed with the group index so a directory listing keeps grid order.
fn report_file_name(index: usize, method: &str, base: &str) -> String {
    format!("{index:03}__{method}__{base}.json").replace(['/', ' '], "_")
}

/// Evaluates every (method, base model) group from checkpoints alone and writes
/// `reports/`, `reports.csv`, `comparison.txt` and `comparison.csv` under `out`.
pub fn evaluate_cells(config: &ExperimentConfig, data: &ExperimentData) -> Result<Evaluation> {
    let horizon = config.horizon();
    let starts = test_starts(data.raw.num_steps(), data.test_start, horizon);
    let settings = EvalSettings {
        horizon,
        metrics: config.metrics.clone(),
        inference: config.inference,
        timing_repeats: config.timing_repeats,
    };
    let cells = config.cells()?;
    let mut groups: Vec<(String, String, Formulation, Vec<&CellSpec>)> = Vec::new();
    for c in &cells {
        match groups
            .iter_mut()
            .find(|(m, b, _, _)| m == c.method_name() && *b == c.base_model)
        {
            Some(g) => g.3.push(c),
            None => groups.push((c.method_name().into(), c.base_model.clone(), c.formulation, vec![c])),
        }
    }
    let report_dir = config.out.join("reports");
    fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (index, (method, base, formulation, members)) in groups.into_iter().enumerate() {
        let mut runs = Vec::new();
        for c in &members {
            let ck = cell_dir(config, &c.id(data, config.normalization)).join(CHECKPOINT_FILE);
            if let Ok(f) = load_checkpoint(&ck) {
                runs.push((c.seed, f));
            }
        }
        if runs.len() < members.len() {
            failures.push((
                method.clone(),
                base.clone(),
                format!(
                    "{} of {} checkpoints missing",
                    members.len() - runs.len(),
                    members.len()
                ),
            ));
        }
        if runs.is_empty() {
            continue;
        }
        match evaluate(&base, &runs, &data.raw, &starts, &settings) {
            Ok(mut r) => {
                debug_assert_eq!(r.method, formulation);
                if method != formulation.name() {
                    r.label = Some(method.clone());
                }
                save_report(&report_dir.join(report_file_name(index, &method, &base)), &r)?;
                reports.push(r);
            }
            Err(e) => failures.push((method, base, e.to_string())),
        }
    }
    write_report_csv(&config.out.join("reports.csv"), &reports)?;
    let table = comparison_table(&reports, config.metrics[0], config.table_horizon);
    write_text(&config.out.join("comparison.txt"), &table.render())?;
    table.write_csv(&config.out.join("comparison.csv"))?;
    Ok(Evaluation {
        reports,
        table,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellRecord>,
    pub evaluation: Evaluation,
}

impl ExperimentOutcome {
    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.status != CellStatus::Failed) && self.evaluation.failures.is_empty()
    }
}

/// Trains missing cells, then evaluates everything. Resumable: cells whose
/// checkpoint exists are not retrained.
pub fn run_experiment(config: &ExperimentConfig, progress: Progress<'_>) -> Result<ExperimentOutcome> {
    let data = load_data(config)?;
    let cells = train_cells(config, &data, progress)?;
    let evaluation = evaluate_cells(config, &data)?;
    Ok(ExperimentOutcome { cells, evaluation })
}

/// Loads every `reports/*.json` under an experiment directory, sorted by file name.
pub fn load_reports(out: &Path) -> Result<Vec<EvalReport>> {
    let dir = out.join("reports");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| crate::evaluate::load_report(p)).collect()
}
