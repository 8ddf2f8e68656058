//! The four training formulations over a shared mini-batch loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{role_indices, Role, TimeSeriesDataset, VariableSpec};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, window_at, window_origins, MaskSampler};
use crate::nn::{ForwardCtx, HyperParams, Network};
use crate::normalize::{NormalizationMethod, Normalizer};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Formulation {
    Mmmf,
    Sbf,
    Rsf,
    Dmf,
}

impl Formulation {
    pub const ALL: [Formulation; 4] = [Formulation::Mmmf, Formulation::Sbf, Formulation::Rsf, Formulation::Dmf];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Mmmf => "MMMF",
            Formulation::Sbf => "SBF",
            Formulation::Rsf => "RSF",
            Formulation::Dmf => "DMF",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(s))
    }

    /// Dataset variables the model reads: predictors only for SBF, everything otherwise.
    pub fn input_columns(self, specs: &[VariableSpec]) -> Result<Vec<usize>> {
        match self {
            Formulation::Sbf => {
                let p = role_indices(specs, Role::Predictor);
                if p.is_empty() {
                    return Err(Error::FormulationInapplicable(
                        "sample-based forecasting needs at least one predictor variable".into(),
                    ));
                }
                Ok(p)
            }
            _ => Ok((0..specs.len()).collect()),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub formulation: Formulation,
    /// History length `T`.
    pub history: usize,
    /// The forecast region spans `k + 1` steps.
    pub k: usize,
    /// MMMF only; `None` means `k + 1`.
    pub max_mask_length: Option<usize>,
    /// DMF input length; `None` means `max(T, k + 1)`.
    pub dmf_history: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Return the parameters with the lowest validation loss instead of the final ones.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Mmmf,
            history: 30,
            k: 59,
            max_mask_length: None,
            dmf_history: None,
            batch_size: 1000,
            epochs: 1000,
            optimizer: AdamConfig::default(),
            seed: 0,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn max_mask(&self) -> usize {
        self.max_mask_length.unwrap_or(self.k + 1)
    }

    pub fn dmf_input_len(&self) -> usize {
        self.dmf_history.unwrap_or(self.history.max(self.k + 1))
    }

    /// `(model input length, rows consumed per sample)`.
    pub fn sample_shape(&self) -> (usize, usize) {
        match self.formulation {
            Formulation::Mmmf => {
                let n = self.history + self.k + 1;
                (n, n)
            }
            Formulation::Rsf => (self.history, self.history + 1),
            Formulation::Dmf => {
                let n = self.dmf_input_len();
                (n, n + self.k + 1)
            }
            Formulation::Sbf => (1, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.history == 0 {
            return fail("history length must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail(format!(
                "batch size ({}) and epochs ({}) must be positive",
                self.batch_size, self.epochs
            ));
        }
        let mm = self.max_mask();
        if mm == 0 || mm > self.k + 1 {
            return fail(format!("max mask length {mm} outside [1, {}]", self.k + 1));
        }
        if self.dmf_input_len() < self.k + 1 {
            return fail(format!(
                "direct model input length {} shorter than the forecast region {}",
                self.dmf_input_len(),
                self.k + 1
            ));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0)
        {
            return fail(format!("invalid optimizer settings {o:?}"));
        }
        Ok(())
    }
}

/// A normalized dataset with observed ranges fitted on the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub dataset: TimeSeriesDataset,
    pub normalizer: Normalizer,
    pub train: Range<usize>,
    pub validation: Range<usize>,
}

impl PreparedData {
    /// Rows outside `train` and `validation` (a held-out test tail) are carried
    /// along but never used for fitting.
    pub fn new(
        raw: &TimeSeriesDataset,
        train: Range<usize>,
        validation: Range<usize>,
        method: NormalizationMethod,
    ) -> Result<Self> {
        if train.is_empty() || train.end > raw.num_steps() || validation.end > raw.num_steps() {
            return Err(Error::Contract(format!(
                "row ranges {train:?} / {validation:?} invalid for {} rows",
                raw.num_steps()
            )));
        }
        let normalizer = Normalizer::fit(raw, train.clone(), method)?;
        let dataset = normalizer.apply(&raw.fit_observed_ranges(train.clone())?)?;
        Ok(Self {
            dataset,
            normalizer,
            train,
            validation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// A trained model with everything needed to forecast on raw-scale data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedForecaster {
    pub formulation: Formulation,
    pub config: TrainConfig,
    pub network: Network,
    pub normalizer: Normalizer,
    /// Specs with normalized observed ranges; these bound MMMF mask values.
    pub specs: Vec<VariableSpec>,
    pub history: Vec<EpochStats>,
}

impl TrainedForecaster {
    pub fn forecast_indices(&self) -> Vec<usize> {
        role_indices(&self.specs, Role::Forecast)
    }
}

/// Builds a network whose inputs match `config.formulation`, initialized from `config.seed`.
pub fn build_network(hyper: &HyperParams, specs: &[VariableSpec], config: &TrainConfig) -> Result<Network> {
    let inputs = config.formulation.input_columns(specs)?;
    let outputs = role_indices(specs, Role::Forecast).len();
    Network::build(hyper, specs, &inputs, outputs, config.seed)
}

/// One assembled mini-batch in the network's `(batch * len, .)` layout.
struct Batch {
    inputs: Vec<f64>,
    target: Matrix,
    rows: Vec<bool>,
    batch: usize,
    len: usize,
}

struct BatchBuilder<'a> {
    ds: &'a TimeSeriesDataset,
    config: &'a TrainConfig,
    forecast: Vec<usize>,
    len: usize,
}

impl<'a> BatchBuilder<'a> {
    fn new(ds: &'a TimeSeriesDataset, config: &'a TrainConfig) -> Self {
        Self {
            ds,
            config,
            forecast: ds.forecast_indices(),
            len: config.sample_shape().0,
        }
    }

    fn build(&self, origins: &[usize], mask: Option<(&mut MaskSampler, usize)>) -> Result<Batch> {
        let (nv, m, len) = (self.ds.num_variables(), self.forecast.len(), self.len);
        let b = origins.len();
        let mut target = Matrix::zeros(b * len, m);
        let mut rows = vec![false; b * len];
        let vals = self.ds.values();
        let cfg = self.config;
        let inputs = match cfg.formulation {
            Formulation::Mmmf => {
                let (sampler, l_m) = mask.ok_or_else(|| Error::Contract("masked batch without a sampler".into()))?;
                let windows = origins
                    .iter()
                    .map(|&o| window_at(self.ds, o, cfg.history, cfg.k))
                    .collect::<Result<Vec<_>>>()?;
                let mb = apply_mask(&windows, l_m, sampler)?;
                let fl = cfg.k + 1;
                for i in 0..b {
                    for j in 0..fl {
                        let r = i * len + cfg.history + j;
                        rows[r] = mb.loss_mask[i * fl + j];
                        target
                            .row_mut(r)
                            .copy_from_slice(&mb.targets[(i * fl + j) * m..(i * fl + j + 1) * m]);
                    }
                }
                mb.inputs
            }
            Formulation::Rsf | Formulation::Dmf | Formulation::Sbf => {
                let mut inputs = Vec::with_capacity(b * len * nv);
                for (i, &o) in origins.iter().enumerate() {
                    inputs.extend_from_slice(&vals[o * nv..(o + len) * nv]);
                    // (position in the output sequence, dataset row of its target)
                    let pairs: Vec<(usize, usize)> = match cfg.formulation {
                        Formulation::Rsf => vec![(len - 1, o + len)],
                        Formulation::Dmf => (0..=cfg.k).map(|j| (len - cfg.k - 1 + j, o + len + j)).collect(),
                        _ => vec![(0, o)],
                    };
                    for (pos, src) in pairs {
                        let r = i * len + pos;
                        rows[r] = true;
                        for (c, &v) in self.forecast.iter().enumerate() {
                            target.set(r, c, vals[src * nv + v]);
                        }
                    }
                }
                inputs
            }
        };
        Ok(Batch {
            inputs,
            target,
            rows,
            batch: b,
            len,
        })
    }
}

fn check_network(network: &Network, specs: &[VariableSpec], config: &TrainConfig) -> Result<()> {
    let expected = config.formulation.input_columns(specs)?;
    let actual: Vec<usize> = network.encoder.columns.iter().map(|c| c.variable).collect();
    if actual != expected || network.encoder.num_vars != specs.len() {
        return Err(Error::Contract(format!(
            "network reads variables {actual:?} but {} needs {expected:?}",
            config.formulation
        )));
    }
    let m = role_indices(specs, Role::Forecast).len();
    if network.output_width() != m {
        return Err(Error::ShapeMismatch {
            expected: (1, m),
            actual: (1, network.output_width()),
        });
    }
    Ok(())
}

/// Mask lengths used across validation batches, capped at the configured maximum.
pub fn validation_mask_cycle(k: usize, max_mask: usize) -> [usize; 3] {
    let mid = (k + 1).div_ceil(2);
    [1, mid.min(max_mask), (k + 1).min(max_mask)]
}

fn validation_loss(
    network: &Network,
    builder: &BatchBuilder<'_>,
    origins: &[usize],
    specs: &[VariableSpec],
) -> Result<Option<f64>> {
    if origins.is_empty() {
        return Ok(None);
    }
    let cfg = builder.config;
    let cycle = validation_mask_cycle(cfg.k, cfg.max_mask());
    let mut sampler = MaskSampler::new(specs, stream(cfg.seed, Stream::Validation))?;
    let (mut sum, mut cells) = (0.0, 0.0);
    for (bi, chunk) in origins.chunks(cfg.batch_size).enumerate() {
        let mask = (cfg.formulation == Formulation::Mmmf).then(|| (&mut sampler, cycle[bi % cycle.len()]));
        let batch = builder.build(chunk, mask)?;
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval(batch.batch, batch.len);
        let out = network.forward(&mut g, &batch.inputs, &mut ctx)?;
        let n = (batch.rows.iter().filter(|&&r| r).count() * batch.target.cols()) as f64;
        let loss = g.row_masked_mse(out, batch.target, batch.rows);
        sum += g.value(loss).get(0, 0) * n;
        cells += n;
    }
    Ok(Some(sum / cells))
}

/// Trains `network` under `config.formulation`, calling `observer` after every epoch.
pub fn train(
    mut network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    config.validate()?;
    let ds = &data.dataset;
    let specs = ds.specs();
    check_network(&network, specs, config)?;

    let span = config.sample_shape().1;
    let mut train_origins = window_origins(data.train.clone(), span, 1)?;
    let val_origins = if data.validation.len() >= span {
        window_origins(data.validation.clone(), span, 1)?
    } else {
        Vec::new()
    };

    let builder = BatchBuilder::new(ds, config);
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let mut sampler = match config.formulation {
        Formulation::Mmmf => Some(MaskSampler::new(specs, stream(config.seed, Stream::Mask))?),
        _ => None,
    };
    let mut adam = Adam::new(config.optimizer, &network.params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, crate::nn::Params)> = None;

    for epoch in 0..config.epochs {
        train_origins.shuffle(&mut shuffle_rng);
        let (mut sum, mut cells) = (0.0, 0.0);
        for chunk in train_origins.chunks(config.batch_size) {
            let mask = match sampler.as_mut() {
                Some(s) => {
                    let l_m = s.sample_length_up_to(config.max_mask());
                    Some((s, l_m))
                }
                None => None,
            };
            let batch = builder.build(chunk, mask)?;
            let n = (batch.rows.iter().filter(|&&r| r).count() * batch.target.cols()) as f64;
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::train(batch.batch, batch.len, &mut dropout_rng);
            let out = network.forward(&mut g, &batch.inputs, &mut ctx)?;
            let loss_var = g.row_masked_mse(out, batch.target, batch.rows);
            let loss = g.value(loss_var).get(0, 0);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grads = g.backward(loss_var);
            let grads = network.params.collect_grads(&g, &grads);
            adam.step(&mut network.params, &grads).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Divergence { epoch },
                e => e,
            })?;
            sum += loss * n;
            cells += n;
        }
        let val_loss = validation_loss(&network, &builder, &val_origins, specs)?;
        let stats = EpochStats {
            epoch,
            train_loss: sum / cells,
            val_loss,
        };
        if config.keep_best {
            if let Some(v) = val_loss {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, network.params.clone()));
                }
            }
        }
        observer(&stats);
        history.push(stats);
    }
    if let Some((_, params)) = best {
        network.params = params;
    }
    Ok(TrainedForecaster {
        formulation: config.formulation,
        config: config.clone(),
        network,
        normalizer: data.normalizer.clone(),
        specs: specs.to_vec(),
        history,
    })
}

fn train_as(
    f: Formulation,
    network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    if config.formulation != f {
        return Err(Error::Config(format!(
            "config formulation is {}, expected {f}",
            config.formulation
        )));
    }
    train(network, data, config, observer)
}

pub fn train_mmmf(
    network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    train_as(Formulation::Mmmf, network, data, config, observer)
}

pub fn train_rsf(
    network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    train_as(Formulation::Rsf, network, data, config, observer)
}

pub fn train_dmf(
    network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    train_as(Formulation::Dmf, network, data, config, observer)
}

pub fn train_sbf(
    network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedForecaster> {
    train_as(Formulation::Sbf, network, data, config, observer)
}

/// Which output cells receive loss and their targets, for a batch at `origins`.
/// MMMF batches use the maximum mask length.
#[doc(hidden)]
pub fn supervised_cells(
    ds: &TimeSeriesDataset,
    config: &TrainConfig,
    origins: &[usize],
) -> Result<(Vec<bool>, Matrix)> {
    let builder = BatchBuilder::new(ds, config);
    let mut sampler = MaskSampler::new(ds.specs(), stream(config.seed, Stream::Mask))?;
    let l = config.max_mask();
    let mask = (config.formulation == Formulation::Mmmf).then_some((&mut sampler, l));
    let b = builder.build(origins, mask)?;
    Ok((b.rows, b.target))
}
