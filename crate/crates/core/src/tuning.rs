//! Seeded random search over boosting hyperparameters, scored by mean
//! cross-validated C-index.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::Hyperparams;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, BoostTrainer};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub eta: (f64, f64),
    pub max_depth: (usize, usize),
    pub min_child_weight: (f64, f64),
    pub reg_alpha: (f64, f64),
    pub reg_lambda: (f64, f64),
    pub subsample: (f64, f64),
    pub colsample_bytree: (f64, f64),
    pub n_rounds: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            eta: (0.01, 0.5),
            max_depth: (2, 8),
            min_child_weight: (0.1, 10.0),
            reg_alpha: (0.0, 10.0),
            reg_lambda: (0.0, 10.0),
            subsample: (0.5, 1.0),
            colsample_bytree: (0.5, 1.0),
            n_rounds: (50, 500),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let ok = ordered(self.eta)
            && self.eta.0 > 0.0
            && self.eta.1 <= 1.0
            && ordered(self.min_child_weight)
            && self.min_child_weight.0 >= 0.0
            && ordered(self.reg_alpha)
            && self.reg_alpha.0 >= 0.0
            && ordered(self.reg_lambda)
            && self.reg_lambda.0 >= 0.0
            && ordered(self.subsample)
            && self.subsample.0 > 0.0
            && self.subsample.1 <= 1.0
            && ordered(self.colsample_bytree)
            && self.colsample_bytree.0 > 0.0
            && self.colsample_bytree.1 <= 1.0
            && self.max_depth.0 >= 1
            && self.max_depth.0 <= self.max_depth.1
            && self.n_rounds.0 >= 1
            && self.n_rounds.0 <= self.n_rounds.1;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("invalid search space".into()))
        }
    }

    pub fn contains(&self, hp: &Hyperparams) -> bool {
        let inside = |v: f64, (a, b): (f64, f64)| a <= v && v <= b;
        inside(hp.eta, self.eta)
            && (self.max_depth.0..=self.max_depth.1).contains(&hp.max_depth)
            && inside(hp.min_child_weight, self.min_child_weight)
            && inside(hp.reg_alpha, self.reg_alpha)
            && inside(hp.reg_lambda, self.reg_lambda)
            && inside(hp.subsample, self.subsample)
            && inside(hp.colsample_bytree, self.colsample_bytree)
            && (self.n_rounds.0..=self.n_rounds.1).contains(&hp.n_rounds)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, tree_seed: u64) -> Hyperparams {
        let uniform = |rng: &mut R, (a, b): (f64, f64)| if a == b { a } else { rng.random_range(a..=b) };
        let eta = uniform(rng, (self.eta.0.ln(), self.eta.1.ln())).exp().clamp(self.eta.0, self.eta.1);
        Hyperparams {
            eta,
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            min_child_weight: uniform(rng, self.min_child_weight),
            reg_alpha: uniform(rng, self.reg_alpha),
            reg_lambda: uniform(rng, self.reg_lambda),
            gamma: 0.0,
            subsample: uniform(rng, self.subsample),
            colsample_bytree: uniform(rng, self.colsample_bytree),
            n_rounds: rng.random_range(self.n_rounds.0..=self.n_rounds.1),
            seed: tree_seed,
        }
    }
}

/// One scored configuration. A failed evaluation has no scores, a `mean`
/// of `None` (ranked as negative infinity) and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub params: Hyperparams,
    pub fold_scores: Vec<f64>,
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceEntry {
    pub fn score(&self) -> f64 {
        self.mean.filter(|m| m.is_finite()).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_score: f64,
    pub trace: Vec<TraceEntry>,
}

impl SearchResult {
    /// JSON lines, one evaluation per line.
    pub fn write_trace<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for e in &self.trace {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Seed for the final evaluation folds, distinct from every tuning fold seed.
pub fn evaluation_seed(seed: u64) -> u64 {
    seed::derive(seed, seed::STREAM_EVAL)
}

fn evaluate(ds: &SurvivalDataset, space: &SearchSpace, k: usize, seed: u64, index: usize) -> TraceEntry {
    let eval_seed = seed::derive_path(seed, &[seed::STREAM_TUNE, index as u64]);
    let mut rng = seed::rng(eval_seed);
    let params = space.sample(&mut rng, seed::derive(eval_seed, seed::STREAM_TREE));
    let fold_seed = seed::derive(eval_seed, seed::STREAM_TUNE);
    match metrics::kfold_cv(ds, k, &BoostTrainer(params.clone()), fold_seed) {
        Ok(cv) => TraceEntry {
            index,
            params,
            fold_scores: cv.fold_scores,
            mean: Some(cv.mean),
            error: None,
        },
        Err(e) => TraceEntry {
            index,
            params,
            fold_scores: Vec::new(),
            mean: None,
            error: Some(e.to_string()),
        },
    }
}

/// Sample `rounds` configurations and keep the one with the highest mean
/// k-fold C-index. Each evaluation draws its configuration and folds from
/// its own derived seed, so the trace is identical at any thread count.
/// The earliest evaluation wins ties.
pub fn random_search(
    ds: &SurvivalDataset,
    space: &SearchSpace,
    rounds: usize,
    k: usize,
    seed: u64,
) -> Result<SearchResult> {
    if rounds == 0 {
        return Err(Error::Validation("search needs at least one round".into()));
    }
    if k < 2 {
        return Err(Error::Validation("k must be at least 2".into()));
    }
    space.validate()?;
    let trace: Vec<TraceEntry> = (0..rounds)
        .into_par_iter()
        .map(|i| evaluate(ds, space, k, seed, i))
        .collect();
    let mut best = 0;
    for (i, e) in trace.iter().enumerate() {
        if e.score() > trace[best].score() {
            best = i;
        }
    }
    Ok(SearchResult {
        best: trace[best].params.clone(),
        best_score: trace[best].score(),
        trace,
    })
}
