//! Synthetic survival data with known log-hazard coefficients.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, SurvivalDataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// One coefficient per binary covariate; sets the covariate count.
    pub betas: Vec<f64>,
    /// Exact fraction of subjects that are right-censored.
    pub censor_frac: f64,
    /// Upper bound on observed times, in days.
    pub max_time: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 850,
            betas: vec![1.0, -2.0, 2.0],
            censor_frac: 0.2,
            max_time: 10_000.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("n must be at least 1".into()));
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("betas must be non-empty and finite".into()));
        }
        if !(0.0..1.0).contains(&self.censor_frac) {
            return Err(Error::Validation("censor fraction must lie in [0, 1)".into()));
        }
        if !(self.max_time > 0.0 && self.max_time.is_finite()) {
            return Err(Error::Validation("max_time must be positive".into()));
        }
        Ok(())
    }

    /// Baseline hazard giving a population mean event time of `max_time / 10`.
    pub fn baseline_hazard(&self) -> f64 {
        let mean_inverse_risk: f64 = self.betas.iter().map(|b| (1.0 + (-b).exp()) / 2.0).product();
        10.0 * mean_inverse_risk / self.max_time
    }

    pub fn n_censored(&self) -> usize {
        (self.censor_frac * self.n as f64).round() as usize
    }
}

/// Uniform on (0, 1].
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Draw a dataset with Bernoulli(0.5) covariates `var1..varp`, exponential
/// event times with rate `h0 * exp(x . beta)`, and a random subset of
/// `round(censor_frac * n)` subjects censored uniformly before their event.
/// Times beyond `max_time` are clipped to it.
pub fn simulate(cfg: &SimConfig) -> Result<SurvivalDataset> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let p = cfg.betas.len();
    let h0 = cfg.baseline_hazard();

    let mut rows = Vec::with_capacity(cfg.n);
    let mut times = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: Vec<f64> = (0..p).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let eta: f64 = x.iter().zip(&cfg.betas).map(|(a, b)| a * b).sum();
        let t = -open_unit(&mut rng).ln() / (h0 * eta.exp());
        times.push(t.min(cfg.max_time));
        rows.push(x);
    }

    let mut events = vec![true; cfg.n];
    for i in index::sample(&mut rng, cfg.n, cfg.n_censored()) {
        events[i] = false;
        times[i] *= open_unit(&mut rng);
    }

    let records = (0..cfg.n)
        .map(|i| SurvivalRecord::new(times[i], events[i], rows[i].iter().map(|&v| Some(v)).collect()))
        .collect();
    let specs = (1..=p).map(|j| FeatureSpec::binary(format!("var{j}"))).collect();
    SurvivalDataset::new(records, specs)
}

/// Append an independent Bernoulli(0.5) covariate named `name`.
pub fn add_noise_binary(ds: &SurvivalDataset, name: &str, seed: u64) -> Result<SurvivalDataset> {
    let mut rng = seed::rng(seed);
    let values: Vec<Option<f64>> = (0..ds.n())
        .map(|_| Some(if rng.random_bool(0.5) { 1.0 } else { 0.0 }))
        .collect();
    ds.with_feature(FeatureSpec::binary(name), &values)
}
