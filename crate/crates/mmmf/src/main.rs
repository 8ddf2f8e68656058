use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mmmf::harness::{
    evaluate_cells, load_data, load_reports, train_cells, CellStatus, DatasetSource, ExperimentConfig, GridEntry,
};
use mmmf::ingest::{broadcast_monthly, derive_calendar, downsample_daily_max, load_csv, load_monthly_csv, Schema};
use mmmf::store::{write_dataset, DatasetMeta};
use mmmf_core::metrics::Metric;
use mmmf_core::normalize::{chrono_split, NormalizationMethod, Normalizer};
use mmmf_core::synthetic::{generate, SyntheticConfig};
use mmmf_core::train::Formulation;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Masked multi-step multivariate forecasting experiments.
#[derive(Parser)]
#[command(name = "mmmf", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; replaces the configured seed list for train and evaluate.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw CSV, derive features, normalize and split.
    PrepareData(PrepareArgs),
    /// Write a synthetic dataset.
    GenerateSynthetic(SyntheticArgs),
    /// Train every experiment cell that has no checkpoint yet.
    Train(GridArgs),
    /// Evaluate checkpoints on the test period and write reports.
    Evaluate(GridArgs),
    /// Train, then evaluate.
    Run(GridArgs),
    /// Print and write the comparison table from saved reports.
    Compare(CompareArgs),
    /// Draw per-step error curves and per-variable bars from saved reports.
    Plot(PlotArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Column declarations (TOML with `timestamp` and `[[columns]]`).
    #[arg(long)]
    schema: PathBuf,
    /// Collapse hourly rows to daily maxima.
    #[arg(long)]
    daily_max: bool,
    /// Add month, day-of-month and day-of-week predictors.
    #[arg(long)]
    calendar: bool,
    /// Monthly `month,value` CSV broadcast to every row.
    #[arg(long, requires = "monthly_name")]
    monthly: Option<PathBuf>,
    #[arg(long)]
    monthly_name: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value = "zscore", value_parser = parse_normalization)]
    normalization: NormalizationMethod,
    /// Training rows required, normally `T + k + 1`.
    #[arg(long, default_value_t = 1)]
    min_train_rows: usize,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    forecast_vars: Option<usize>,
    /// Weight of the future-predictor term.
    #[arg(long)]
    future_weight: Option<f64>,
    #[arg(long)]
    ar_coefficient: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    period: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    /// Dataset CSV (with sidecar), replacing the configured source.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_formulation)]
    formulation: Vec<Formulation>,
    #[arg(long)]
    base_model: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_mask_length: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_parser = parse_metric, default_value = "MSE")]
    metric: Metric,
    /// Forecast step to tabulate; all steps pooled when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    /// Second experiment directory, tabulated side by side.
    #[arg(long)]
    paired: Option<PathBuf>,
    /// Column names for `--paired`, e.g. `without,with`.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_parser = parse_metric, default_value = "MSE")]
    metric: Metric,
    /// Step for the per-variable bar chart.
    #[arg(long, default_value_t = 1)]
    step: usize,
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    Formulation::parse(s).ok_or_else(|| format!("unknown formulation `{s}`"))
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric `{s}`"))
}

fn parse_normalization(s: &str) -> Result<NormalizationMethod, String> {
    match s {
        "zscore" => Ok(NormalizationMethod::Zscore),
        "minmax" => Ok(NormalizationMethod::Minmax),
        _ => Err(format!("unknown normalization `{s}`")),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn apply_grid_args(cfg: &mut ExperimentConfig, a: &GridArgs) -> mmmf::Result<()> {
    if let Some(p) = &a.dataset {
        cfg.dataset = DatasetSource::Path(p.clone());
    }
    if !a.formulation.is_empty() || !a.base_model.is_empty() {
        let formulations = if a.formulation.is_empty() {
            cfg.grid.iter().flat_map(|g| g.formulations.clone()).collect()
        } else {
            a.formulation.clone()
        };
        let base_models = if a.base_model.is_empty() {
            vec!["recurrent".to_string()]
        } else {
            a.base_model.clone()
        };
        cfg.grid = vec![GridEntry {
            formulations,
            base_models,
            label: None,
            max_mask_length: None,
        }];
    }
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.history = a.history.unwrap_or(t.history);
    t.k = a.k.unwrap_or(t.k);
    if a.max_mask_length.is_some() {
        t.max_mask_length = a.max_mask_length;
    }
    t.optimizer.learning_rate = a.learning_rate.unwrap_or(t.optimizer.learning_rate);
    if a.horizon.is_some() {
        cfg.horizon = a.horizon;
    }
    if a.parallelism.is_some() {
        cfg.parallelism = a.parallelism;
    }
    cfg.validate()
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

fn prepare(cli: &Cli, a: &PrepareArgs) -> anyhow::Result<()> {
    let schema_text = std::fs::read_to_string(&a.schema).with_context(|| format!("reading {}", a.schema.display()))?;
    let schema: Schema = toml::from_str(&schema_text).map_err(|e| mmmf::Error::Config(e.to_string()))?;
    let mut ds = load_csv(&a.csv, &schema)?;
    if a.daily_max {
        ds = downsample_daily_max(&ds)?;
    }
    if a.calendar {
        ds = derive_calendar(&ds)?;
    }
    if let (Some(path), Some(name)) = (&a.monthly, &a.monthly_name) {
        ds = broadcast_monthly(&ds, &load_monthly_csv(path)?, name)?;
    }
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(mmmf::Error::Config(format!("test fraction {} outside (0, 1)", a.test_fraction)).into());
    }
    let n = ds.num_steps();
    let test_start = n - (a.test_fraction * n as f64).floor() as usize;
    let split = chrono_split(test_start, a.train_fraction, a.min_train_rows)?;
    let normalizer = Normalizer::fit(&ds, split.train.clone(), a.normalization)?;
    let normalized = normalizer.apply(&ds)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("data"))
        .join("dataset.csv");
    write_dataset(
        &out,
        &normalized,
        &DatasetMeta {
            specs: normalized.specs().to_vec(),
            normalizer: Some(normalizer),
            split: Some(split.clone()),
            test_start: Some(test_start),
        },
    )?;
    println!(
        "wrote {} ({} rows; train {:?}, validation {:?}, test from {test_start})",
        out.display(),
        n,
        split.train,
        split.validation
    );
    Ok(())
}

fn synthetic(cli: &Cli, a: &SyntheticArgs) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::load(p)?.dataset {
            DatasetSource::Synthetic(s) => s,
            DatasetSource::Path(_) => bail!(mmmf::Error::Config("configured dataset is not synthetic".into())),
        },
        None => SyntheticConfig::default(),
    };
    cfg.num_steps = a.steps.unwrap_or(cfg.num_steps);
    cfg.num_forecast = a.forecast_vars.unwrap_or(cfg.num_forecast);
    cfg.future_weight = a.future_weight.unwrap_or(cfg.future_weight);
    cfg.ar_coefficient = a.ar_coefficient.unwrap_or(cfg.ar_coefficient);
    cfg.noise_std = a.noise_std.unwrap_or(cfg.noise_std);
    cfg.period = a.period.unwrap_or(cfg.period);
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    let ds = generate(&cfg)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("data"))
        .join("synthetic.csv");
    write_dataset(
        &out,
        &ds,
        &DatasetMeta {
            specs: ds.specs().to_vec(),
            normalizer: None,
            split: None,
            test_start: None,
        },
    )?;
    println!("wrote {} ({} rows)", out.display(), ds.num_steps());
    Ok(())
}

/// Exit code 4 when some cells failed, 3 when every cell diverged.
fn train_cmd(cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    let data = load_data(cfg)?;
    let cells = train_cells(cfg, &data, &progress)?;
    let failed: Vec<_> = cells.iter().filter(|c| c.status == CellStatus::Failed).collect();
    for c in &failed {
        eprintln!(
            "failed: {} / {} / seed {}: {}",
            c.method,
            c.base_model,
            c.seed,
            c.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "{} trained, {} reused, {} failed; manifest at {}",
        cells.iter().filter(|c| c.status == CellStatus::Trained).count(),
        cells.iter().filter(|c| c.status == CellStatus::Reused).count(),
        failed.len(),
        cfg.out.join("manifest.json").display()
    );
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else if failed.len() == cells.len() && failed.iter().all(|c| c.error_code == Some(3)) {
        ExitCode::from(3)
    } else {
        ExitCode::from(4)
    })
}

fn evaluate_cmd(cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    let data = load_data(cfg)?;
    let eval = evaluate_cells(cfg, &data)?;
    print!("{}", eval.table.render());
    for (m, b, e) in &eval.failures {
        eprintln!("not evaluated: {m} / {b}: {e}");
    }
    Ok(if eval.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

fn experiment_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    Ok(match (&cli.out, &cli.config) {
        (Some(o), _) => o.clone(),
        (None, Some(_)) => load_config(cli)?.out,
        (None, None) => PathBuf::from("runs"),
    })
}

fn compare(cli: &Cli, a: &CompareArgs) -> anyhow::Result<()> {
    let dir = experiment_dir(cli)?;
    let reports = load_reports(&dir)?;
    let table = match &a.paired {
        Some(other) => {
            let other_reports = load_reports(other)?;
            let labels = match a.labels.as_slice() {
                [l, r] => [l.clone(), r.clone()],
                [] => [label_of(&dir), label_of(other)],
                _ => bail!(mmmf::Error::Config("--labels takes two comma-separated names".into())),
            };
            mmmf::compare::paired_table(
                &[
                    (labels[0].clone(), &reports[..]),
                    (labels[1].clone(), &other_reports[..]),
                ],
                a.metric,
                a.horizon,
            )
        }
        None => mmmf::compare::comparison_table(&reports, a.metric, a.horizon),
    };
    print!("{}", table.render());
    std::fs::write(dir.join("comparison.txt"), table.render())?;
    table.write_csv(&dir.join("comparison.csv"))?;
    Ok(())
}

fn label_of(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn plot(cli: &Cli, a: &PlotArgs) -> anyhow::Result<()> {
    let dir = experiment_dir(cli)?;
    let reports = load_reports(&dir)?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let curves = plots.join("horizon_curves.svg");
    let panels = mmmf::plot::plot_horizon_curves(&reports, a.metric, &curves)?;
    let bars = plots.join("variable_bars.svg");
    mmmf::plot::plot_variable_bars(&reports, a.metric, a.step, &bars)?;
    println!("wrote {} ({panels} panels) and {}", curves.display(), bars.display());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let grid_config = |a: &GridArgs| -> anyhow::Result<ExperimentConfig> {
        let mut cfg = load_config(cli)?;
        apply_grid_args(&mut cfg, a)?;
        Ok(cfg)
    };
    match &cli.command {
        Command::PrepareData(a) => prepare(cli, a).map(|_| ExitCode::SUCCESS),
        Command::GenerateSynthetic(a) => synthetic(cli, a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => train_cmd(&grid_config(a)?),
        Command::Evaluate(a) => evaluate_cmd(&grid_config(a)?),
        Command::Run(a) => {
            let cfg = grid_config(a)?;
            let trained = train_cmd(&cfg)?;
            let evaluated = evaluate_cmd(&cfg)?;
            Ok(if trained == ExitCode::SUCCESS {
                evaluated
            } else {
                trained
            })
        }
        Command::Compare(a) => compare(cli, a).map(|_| ExitCode::SUCCESS),
        Command::Plot(a) => plot(cli, a).map(|_| ExitCode::SUCCESS),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let code = err.chain().find_map(|e| {
        e.downcast_ref::<mmmf::Error>()
            .map(mmmf::Error::exit_code)
            .or_else(|| e.downcast_ref::<mmmf_core::Error>().map(mmmf::error::core_exit_code))
    });
    code.unwrap_or(1) as u8
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
