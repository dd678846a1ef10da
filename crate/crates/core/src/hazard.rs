//! Hazard ratios from SHAP attributions, with bootstrap percentile intervals.
//!
//! Because the boosted margin decomposes additively into per-feature
//! attributions, `exp(margin)` factorizes into `exp(phi_j)` terms. The hazard
//! ratio of feature `j` between two subgroups is the ratio of the subgroup
//! means of `exp(phi_j)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{self, Hyperparams};
use crate::data::{self, SurvivalDataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::shap::{self, ShapMatrix};

/// Resample attempts per replicate before giving up on drawing events.
pub const MAX_REPLICATE_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSplit {
    /// First subgroup (numerator).
    pub s1: Vec<usize>,
    /// Reference subgroup (denominator).
    pub s2: Vec<usize>,
    pub rule: String,
}

impl SubgroupSplit {
    pub fn new(s1: Vec<usize>, s2: Vec<usize>, rule: impl Into<String>) -> Result<Self> {
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::Split("both subgroups must be non-empty".into()));
        }
        if s1.iter().any(|i| s2.contains(i)) {
            return Err(Error::Split("subgroups overlap".into()));
        }
        Ok(SubgroupSplit {
            s1,
            s2,
            rule: rule.into(),
        })
    }

    pub fn swapped(&self) -> Self {
        SubgroupSplit {
            s1: self.s2.clone(),
            s2: self.s1.clone(),
            rule: format!("swapped({})", self.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrEstimate {
    pub variable: String,
    #[serde(rename = "hr_point")]
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
    pub n_boot: usize,
    /// Single-model value on the full data, alongside the bootstrap median.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_data: Option<f64>,
}

/// Binary features compare 1 against 0; others compare `x >= median`
/// against `x < median`. Rows with the feature missing are in neither group.
pub fn median_split(ds: &SurvivalDataset, feature: usize) -> Result<SubgroupSplit> {
    if feature >= ds.p() {
        return Err(Error::Validation(format!("feature index {feature} out of range")));
    }
    let col = ds.column(feature);
    let name = &ds.specs()[feature].name;
    let observed: Vec<(usize, f64)> = col
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let binary = !observed.is_empty() && observed.iter().all(|&(_, v)| v == 0.0 || v == 1.0);
    let (cut, rule) = if binary {
        (1.0, format!("{name} = 1 vs {name} = 0"))
    } else {
        let mut vals: Vec<f64> = observed.iter().map(|&(_, v)| v).collect();
        let m = data::median(&mut vals)
            .ok_or_else(|| Error::Split(format!("'{name}' has no observed values")))?;
        (m, format!("{name} >= {m} vs {name} < {m}"))
    };
    let (s1, s2): (Vec<(usize, f64)>, Vec<(usize, f64)>) = observed.into_iter().partition(|&(_, v)| v >= cut);
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::Split(format!("'{name}' does not separate into two subgroups")));
    }
    Ok(SubgroupSplit {
        s1: s1.into_iter().map(|(i, _)| i).collect(),
        s2: s2.into_iter().map(|(i, _)| i).collect(),
        rule,
    })
}

/// `mean_{S1} exp(phi_j) / mean_{S2} exp(phi_j)`.
pub fn hr_from_shap(shap: &ShapMatrix, feature: usize, split: &SubgroupSplit) -> Result<f64> {
    if split.s1.is_empty() || split.s2.is_empty() {
        return Err(Error::Split("empty subgroup".into()));
    }
    let n = shap.n();
    let mean_exp = |idx: &[usize]| -> Result<f64> {
        let mut s = 0.0;
        for &i in idx {
            if i >= n {
                return Err(Error::Split(format!("subgroup index {i} outside {n} records")));
            }
            s += shap.phi[i][feature].exp();
        }
        Ok(s / idx.len() as f64)
    };
    Ok(mean_exp(&split.s1)? / mean_exp(&split.s2)?)
}

/// Type-7 quantile of sorted data (linear interpolation between order statistics).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Seed of bootstrap replicate `b`, attempt `attempt`.
pub fn replicate_seed(master_seed: u64, b: usize, attempt: usize) -> u64 {
    seed::derive_path(master_seed, &[seed::STREAM_BOOT, b as u64, attempt as u64])
}

fn replicate(
    ds: &SurvivalDataset,
    hp: &Hyperparams,
    splits: &[SubgroupSplit],
    master_seed: u64,
    b: usize,
) -> Result<Vec<f64>> {
    for attempt in 0..=MAX_REPLICATE_RETRIES {
        let s = replicate_seed(master_seed, b, attempt);
        let sample = data::bootstrap_resample(ds, s)?;
        if sample.n_events() == 0 {
            log::warn!("bootstrap replicate {b}: resample {attempt} has no events, redrawing");
            continue;
        }
        let hp_b = Hyperparams {
            seed: seed::derive(s, seed::STREAM_TREE),
            ..hp.clone()
        };
        let ens = boost::train(&sample, &hp_b)?;
        let phi = shap::tree_shap(&ens, ds)?;
        return splits
            .iter()
            .enumerate()
            .map(|(j, sp)| hr_from_shap(&phi, j, sp))
            .collect();
    }
    Err(Error::Training(format!(
        "bootstrap replicate {b}: no events in {} resamples",
        MAX_REPLICATE_RETRIES + 1
    )))
}

/// Bootstrap the boosted-model hazard ratio of every feature.
///
/// Each replicate resamples `ds` with replacement, trains a fresh ensemble
/// with `hp`, explains the full original data and evaluates every feature on
/// subgroups fixed from the original data. The reported point is the median
/// replicate, the interval spans the 2.5th to 97.5th percentiles. Replicates
/// run on the current rayon pool and are merged by index, so the result does
/// not depend on the number of threads.
pub fn bootstrap_hr(ds: &SurvivalDataset, hp: &Hyperparams, n_boot: usize, master_seed: u64) -> Result<Vec<HrEstimate>> {
    if n_boot == 0 {
        return Err(Error::Validation("number of bootstraps must be at least 1".into()));
    }
    let splits = (0..ds.p())
        .map(|j| median_split(ds, j))
        .collect::<Result<Vec<_>>>()?;

    let full_model = boost::train(ds, hp)?;
    let full_shap = shap::tree_shap(&full_model, ds)?;

    let reps: Vec<Vec<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| replicate(ds, hp, &splits, master_seed, b))
        .collect::<Result<_>>()?;

    (0..ds.p())
        .map(|j| {
            let mut vals: Vec<f64> = reps.iter().map(|r| r[j]).collect();
            vals.sort_by(f64::total_cmp);
            let ci_low = quantile_sorted(&vals, 0.025);
            let ci_high = quantile_sorted(&vals, 0.975);
            Ok(HrEstimate {
                variable: ds.specs()[j].name.clone(),
                point: quantile_sorted(&vals, 0.5),
                ci_low,
                ci_high,
                significant: ci_low > 1.0 || ci_high < 1.0,
                n_boot,
                full_data: Some(hr_from_shap(&full_shap, j, &splits[j])?),
            })
        })
        .collect()
}

/// Flat CSV form of a list of estimates.
pub fn write_hr_csv<W: std::io::Write>(rows: &[HrEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "hr_point", "ci_low", "ci_high", "significant", "n_boot"])?;
    for r in rows {
        w.write_record([
            r.variable.clone(),
            format!("{}", r.point),
            format!("{}", r.ci_low),
            format!("{}", r.ci_high),
            r.significant.to_string(),
            r.n_boot.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
