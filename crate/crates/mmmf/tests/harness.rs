use std::path::Path;

use mmmf::compare::{comparison_table, paired_table};
use mmmf::harness::{
    evaluate_cells, load_data, load_reports, run_experiment, train_cells, CellStatus, DatasetSource, ExperimentConfig,
    GridEntry, Manifest, CHECKPOINT_FILE, EPOCH_LOG_FILE,
};
use mmmf::plot::{plot_horizon_curves, plot_variable_bars};
use mmmf_core::metrics::Metric;
use mmmf_core::nn::{FeedForwardConfig, HyperParams, RecurrentConfig};
use mmmf_core::optim::AdamConfig;
use mmmf_core::synthetic::SyntheticConfig;
use mmmf_core::train::{Formulation, TrainConfig};

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        out: out.to_path_buf(),
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            num_steps: 300,
            num_forecast: 2,
            ..SyntheticConfig::default()
        }),
        grid: vec![
            GridEntry {
                formulations: vec![Formulation::Mmmf, Formulation::Rsf, Formulation::Dmf],
                base_models: vec!["recurrent".into()],
                label: None,
                max_mask_length: None,
            },
            GridEntry {
                formulations: vec![Formulation::Sbf],
                base_models: vec!["feed-forward".into()],
                label: None,
                max_mask_length: None,
            },
        ],
        models: vec![
            HyperParams::Recurrent(RecurrentConfig { layers: 1, hidden: 4 }),
            HyperParams::FeedForward(FeedForwardConfig { hidden: 4 }),
        ],
        train: TrainConfig {
            history: 4,
            k: 3,
            batch_size: 32,
            epochs: 2,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        },
        seeds: vec![0, 1],
        metrics: vec![Metric::Mse, Metric::Mape],
        timing_repeats: 3,
        parallelism: Some(2),
        ..ExperimentConfig::default()
    }
}

fn quiet(_: &str) {}

#[test]
fn config_toml_round_trip_and_validation() {
    let cfg = tiny(Path::new("out"));
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);

    let err = ExperimentConfig::from_toml("surprise = 1").unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(ExperimentConfig::from_toml("seeds = []").is_err());
    assert!(ExperimentConfig::from_toml("horizon = 99").is_err());
    assert!(ExperimentConfig::from_toml("[train]\nk = 3\nmax_mask_length = 5").is_err());

    let partial =
        ExperimentConfig::from_toml("seeds = [7]\n[[models]]\narchitecture = \"recurrent\"\nhidden = 8").unwrap();
    assert_eq!(partial.seeds, [7]);
    assert_eq!(
        partial.hyper_params("recurrent").unwrap(),
        HyperParams::Recurrent(RecurrentConfig {
            hidden: 8,
            ..RecurrentConfig::default()
        })
    );
    assert_eq!(partial.cells().unwrap().len(), 10);
}

#[test]
fn cells_carry_labels_and_mask_limits() {
    let mut cfg = tiny(Path::new("out"));
    cfg.grid.push(GridEntry {
        formulations: vec![Formulation::Mmmf],
        base_models: vec!["recurrent".into()],
        label: Some("MMMF-1s".into()),
        max_mask_length: Some(1),
    });
    let cells = cfg.cells().unwrap();
    assert_eq!(cells.len(), 10);
    let one_s: Vec<_> = cells.iter().filter(|c| c.method_name() == "MMMF-1s").collect();
    assert_eq!(one_s.len(), 2);
    assert!(one_s.iter().all(|c| c.train.max_mask() == 1));
    let data = load_data(&cfg).unwrap();
    let ids: std::collections::HashSet<_> = cells.iter().map(|c| c.id(&data, cfg.normalization)).collect();
    assert_eq!(ids.len(), cells.len());
}

#[test]
fn experiment_is_resumable_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let outcome = run_experiment(&cfg, &quiet).unwrap();
    assert!(outcome.is_complete());
    assert_eq!(outcome.cells.len(), 8);
    assert!(outcome.cells.iter().all(|c| c.status == CellStatus::Trained));
    for c in &outcome.cells {
        assert!(c.dir.join(CHECKPOINT_FILE).exists());
        let log = std::fs::read_to_string(c.dir.join(EPOCH_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 1 + cfg.train.epochs);
    }
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.cells, outcome.cells);

    // reports: one per method and base model, each over both seeds
    let reports = &outcome.evaluation.reports;
    assert_eq!(reports.len(), 4);
    assert!(reports
        .iter()
        .all(|r| r.seeds == [0, 1] && r.horizon == 4 && r.inference_time.is_some()));
    assert_eq!(&load_reports(dir.path()).unwrap(), reports);
    for f in ["reports.csv", "comparison.txt", "comparison.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    // drop one checkpoint: only that cell retrains
    let victim = &outcome.cells[3];
    let before = std::fs::metadata(outcome.cells[0].dir.join(CHECKPOINT_FILE))
        .unwrap()
        .modified()
        .unwrap();
    std::fs::remove_file(victim.dir.join(CHECKPOINT_FILE)).unwrap();
    let data = load_data(&cfg).unwrap();
    let again = train_cells(&cfg, &data, &quiet).unwrap();
    for (i, c) in again.iter().enumerate() {
        let want = if i == 3 {
            CellStatus::Trained
        } else {
            CellStatus::Reused
        };
        assert_eq!(c.status, want, "cell {i}");
    }
    let after = std::fs::metadata(outcome.cells[0].dir.join(CHECKPOINT_FILE))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(before, after);

    // evaluation from checkpoints alone reproduces every metric
    let eval = evaluate_cells(&cfg, &data).unwrap();
    for (a, b) in eval.reports.iter().zip(reports) {
        assert_eq!(a.rows, b.rows);
    }
}

#[test]
fn comparison_marks_one_best_per_base_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![0];
    let reports = run_experiment(&cfg, &quiet).unwrap().evaluation.reports;

    let table = comparison_table(&reports, Metric::Mse, Some(2));
    assert_eq!(table.rows.len(), 4);
    for base in ["recurrent", "feed-forward"] {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.base_model == base).collect();
        let best: Vec<_> = rows.iter().filter(|r| r.cells[0].as_ref().unwrap().best).collect();
        assert_eq!(best.len(), 1, "{base}");
        let min = rows
            .iter()
            .map(|r| r.cells[0].as_ref().unwrap().mean)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best[0].cells[0].as_ref().unwrap().mean, min);
    }
    let text = table.render();
    assert!(text.contains("MSE @ step 2") && text.contains('*'));

    let paired = paired_table(
        &[("a".into(), &reports[..]), ("b".into(), &reports[..1])],
        Metric::Mape,
        None,
    );
    assert_eq!(paired.columns, ["a", "b"]);
    assert!(paired.rows[0].cells[1].is_some());
    assert!(paired.rows[1].cells[1].is_none());
    let csv = dir.path().join("paired.csv");
    paired.write_csv(&csv).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);

    let svg = dir.path().join("curves.svg");
    assert_eq!(plot_horizon_curves(&reports, Metric::Mse, &svg).unwrap(), 2);
    let drawn = std::fs::read_to_string(&svg).unwrap();
    assert!(drawn.contains("recurrent") && drawn.contains("DMF"));
    assert_eq!(
        plot_variable_bars(&reports, Metric::Mape, 1, &dir.path().join("bars.svg")).unwrap(),
        2
    );
}

#[test]
fn failed_cells_are_recorded_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![0];
    cfg.grid.truncate(1);
    cfg.train.optimizer.learning_rate = 1e200;
    cfg.train.epochs = 5;
    let data = load_data(&cfg).unwrap();
    let cells = train_cells(&cfg, &data, &quiet).unwrap();
    assert!(cells
        .iter()
        .all(|c| c.status == CellStatus::Failed && c.error.is_some()));
    assert!(cells.iter().all(|c| c.error_code == Some(3)), "{cells:?}");
    let eval = evaluate_cells(&cfg, &data).unwrap();
    assert!(eval.reports.is_empty());
    assert_eq!(eval.failures.len(), 3);
}
