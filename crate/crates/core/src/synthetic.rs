//! Synthetic datasets with a tunable mix of future-predictor and autoregressive signal.
//!
//! `x_t = sin(2 pi t / P) + u_t` with `u_t ~ U(-1, 1)`, a phase code `t mod P`,
//! and for each forecast variable `j`:
//! `y_t = a * g_j(x_t) + (1 - a) * rho * y_{t-1} + sigma * e_t`,
//! where `g_j(x) = 2 tanh(1.5 x + 0.3 j)`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{timestamp_labels, Role, TimeSeriesDataset, VariableSpec};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const BURN_IN: i64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_steps: usize,
    pub num_forecast: usize,
    /// Weight `a` of the future-predictor term, in `[0, 1]`.
    pub future_weight: f64,
    /// `rho`, in `(-1, 1)`.
    pub ar_coefficient: f64,
    pub noise_std: f64,
    pub period: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_steps: 5000,
            num_forecast: 1,
            future_weight: 0.8,
            ar_coefficient: 0.5,
            noise_std: 0.05,
            period: 7,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_steps > 0
            && self.num_forecast > 0
            && self.period > 0
            && (0.0..=1.0).contains(&self.future_weight)
            && self.ar_coefficient > -1.0
            && self.ar_coefficient < 1.0
            && self.noise_std >= 0.0
            && self.noise_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic configuration {self:?}")))
        }
    }
}

/// The fixed nonlinearity for forecast variable `j`.
pub fn response(x: f64, j: usize) -> f64 {
    2.0 * libm::tanh(1.5 * x + 0.3 * j as f64)
}

pub fn generate(config: &SyntheticConfig) -> Result<TimeSeriesDataset> {
    config.validate()?;
    let m = config.num_forecast;
    let p = config.period;
    let mut rng = stream(config.seed, Stream::Synthetic);
    let a = config.future_weight;
    let lag = (1.0 - a) * config.ar_coefficient;

    let mut specs = Vec::with_capacity(2 + m);
    specs.push(VariableSpec::continuous("x", Role::Predictor));
    specs.push(VariableSpec::categorical("phase", Role::Predictor, p));
    for j in 0..m {
        let name = if m == 1 { "y".into() } else { format!("y{j}") };
        specs.push(VariableSpec::continuous(name, Role::Forecast));
    }

    let n = config.num_steps;
    let mut values = Vec::with_capacity(n * (2 + m));
    let mut y = alloc::vec![0.0; m];
    for t in -BURN_IN..n as i64 {
        let phase = t.rem_euclid(p as i64);
        let x = libm::sin(2.0 * PI * phase as f64 / p as f64) + rng.random_range(-1.0..1.0);
        for (j, yj) in y.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *yj = a * response(x, j) + lag * *yj + config.noise_std * e;
        }
        if t >= 0 {
            values.push(x);
            values.push(phase as f64);
            values.extend_from_slice(&y);
        }
    }
    TimeSeriesDataset::new(specs, values, timestamp_labels(0..n))
}
