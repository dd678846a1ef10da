//! Harrell's concordance index, k-fold cross-validation and the
//! Kaplan-Meier estimator with Greenwood intervals.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{self, Hyperparams};
use crate::cox;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Partition attempts before giving up on folds with events.
pub const MAX_PARTITION_RETRIES: usize = 10;

/// Greenwood intervals use the same normal quantile as the Wald intervals.
const Z95: f64 = cox::WALD_Z;

/// Fenwick tree of counts over risk ranks.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn count_below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C: over comparable pairs (the earlier subject had an event),
/// the fraction where the earlier subject has the higher risk, ties counting
/// one half. Equal times pair only when exactly one subject had the event,
/// which is then the earlier; two tied events are not comparable.
pub fn c_index(times: &[f64], events: &[bool], risk: &[f64]) -> Result<f64> {
    let n = times.len();
    if events.len() != n || risk.len() != n {
        return Err(Error::Validation("c_index inputs must have equal lengths".into()));
    }
    let mut distinct: Vec<f64> = risk.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = |r: f64| distinct.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut later = Fenwick::new(distinct.len());
    let mut n_later: u64 = 0;
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && times[order[end]] == times[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        for &j in group.iter().filter(|&&j| !events[j]) {
            later.add(rank(risk[j]));
            n_later += 1;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            let r = rank(risk[i]);
            let below = later.count_below(r);
            let equal = later.count_below(r + 1) - below;
            concordant += below;
            tied += equal;
            comparable += n_later;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            later.add(rank(risk[i]));
            n_later += 1;
        }
        start = end;
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / comparable as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
}

impl CvResult {
    pub fn from_scores(fold_scores: Vec<f64>) -> Self {
        let k = fold_scores.len() as f64;
        let mean = fold_scores.iter().sum::<f64>() / k;
        let std = if fold_scores.len() > 1 {
            (fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        CvResult {
            fold_scores,
            mean,
            std,
        }
    }
}

/// A model family that can be fit on one dataset and score another.
pub trait RiskTrainer: Sync {
    /// Fit on `train` and return risk scores (higher = more hazard) for `valid`.
    fn fit_predict(&self, train: &SurvivalDataset, valid: &SurvivalDataset) -> Result<Vec<f64>>;
}

/// Linear Cox model, risk = `x . beta`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoxTrainer;

impl RiskTrainer for CoxTrainer {
    fn fit_predict(&self, train: &SurvivalDataset, valid: &SurvivalDataset) -> Result<Vec<f64>> {
        cox::fit_coxph(train)?.predict(valid)
    }
}

/// Boosted Cox trees, risk = ensemble margin.
#[derive(Debug, Clone)]
pub struct BoostTrainer(pub Hyperparams);

impl RiskTrainer for BoostTrainer {
    fn fit_predict(&self, train: &SurvivalDataset, valid: &SurvivalDataset) -> Result<Vec<f64>> {
        boost::train(train, &self.0)?.predict(valid)
    }
}

/// Fold label of every record; each fold is guaranteed at least one event.
pub fn fold_assignment(ds: &SurvivalDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > ds.n() {
        return Err(Error::Validation(format!("cannot split {} records into {k} folds", ds.n())));
    }
    let events = ds.events();
    for attempt in 0..=MAX_PARTITION_RETRIES {
        let mut rng = seed::rng(seed::derive(seed, attempt as u64));
        let mut perm: Vec<usize> = (0..ds.n()).collect();
        perm.shuffle(&mut rng);
        let mut folds = vec![0; ds.n()];
        for (pos, &i) in perm.iter().enumerate() {
            folds[i] = pos % k;
        }
        let mut has_event = vec![false; k];
        for (i, &f) in folds.iter().enumerate() {
            has_event[f] |= events[i];
        }
        if has_event.iter().all(|&e| e) {
            return Ok(folds);
        }
        log::debug!("fold partition {attempt} left a fold without events, redrawing");
    }
    Err(Error::Validation(format!(
        "could not draw {k} folds that all contain an event"
    )))
}

/// k-fold cross-validated C-index. Folds are fit independently (in parallel
/// on the current rayon pool) and merged by fold index.
pub fn kfold_cv(ds: &SurvivalDataset, k: usize, trainer: &dyn RiskTrainer, seed: u64) -> Result<CvResult> {
    let folds = fold_assignment(ds, k, seed)?;
    let scores = (0..k)
        .into_par_iter()
        .map(|f| {
            let (valid_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| folds[i] == f);
            let train = ds.subset(&train_idx)?;
            let valid = ds.subset(&valid_idx)?;
            let risk = trainer.fit_predict(&train, &valid)?;
            c_index(&valid.times(), &valid.events(), &risk)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvResult::from_scores(scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Number at risk just before each time.
    pub n_risk: Vec<usize>,
    pub n_events: Vec<usize>,
    pub median_survival: Option<f64>,
}

impl KmCurve {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "survival", "ci_low", "ci_high", "n_risk", "n_events"])?;
        for k in 0..self.times.len() {
            w.write_record([
                format!("{}", self.times[k]),
                format!("{}", self.survival[k]),
                format!("{}", self.ci_low[k]),
                format!("{}", self.ci_high[k]),
                self.n_risk[k].to_string(),
                self.n_events[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Product-limit estimate with log-transformed Greenwood 95% bands.
pub fn km_estimate(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    if times.len() != events.len() {
        return Err(Error::Validation("times and events differ in length".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        n_risk: Vec::new(),
        n_events: Vec::new(),
        median_survival: None,
    };
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut start = 0;
    while start < order.len() {
        let t = times[order[start]];
        let mut end = start;
        while end < order.len() && times[order[end]] == t {
            end += 1;
        }
        let d = order[start..end].iter().filter(|&&i| events[i]).count();
        if d > 0 {
            s *= (at_risk - d) as f64 / at_risk as f64;
            let (lo, hi) = if at_risk > d {
                greenwood += d as f64 / (at_risk as f64 * (at_risk - d) as f64);
                let half = Z95 * greenwood.sqrt();
                (s * (-half).exp(), (s * half.exp()).min(1.0))
            } else {
                (0.0, 0.0)
            };
            curve.times.push(t);
            curve.survival.push(s);
            curve.ci_low.push(lo.clamp(0.0, 1.0));
            curve.ci_high.push(hi.clamp(0.0, 1.0));
            curve.n_risk.push(at_risk);
            curve.n_events.push(d);
            if curve.median_survival.is_none() && s <= 0.5 {
                curve.median_survival = Some(t);
            }
        }
        at_risk -= end - start;
        start = end;
    }
    Ok(curve)
}
