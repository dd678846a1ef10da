//! Exact path-dependent TreeSHAP for [`TreeEnsemble`]s.
//!
//! For one tree the explained game is the cover-weighted conditional
//! expectation `v(S)`: at a split on a feature in `S` the sample's own branch
//! is followed, otherwise both branches are averaged with the weights from
//! [`child_fractions`]. [`tree_shap`] computes the Shapley values of that game
//! in polynomial time by tracking the share of every coalition size along each
//! root-to-leaf path; [`shap_brute_force`] enumerates all coalitions and is
//! kept as a verification oracle.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::boost::{child_fractions, goes_left, TreeEnsemble, TreeNode};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Largest feature count accepted by [`shap_brute_force`].
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub phi0: f64,
    /// `phi[i][j]`: attribution of feature `j` for record `i`.
    pub phi: Vec<Vec<f64>>,
    #[serde(default)]
    pub feature_names: Vec<String>,
}

impl ShapMatrix {
    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.phi.iter().map(|r| r[j]).collect()
    }

    /// `phi0 + sum_j phi[i][j]`, which equals the model margin of record `i`.
    pub fn reconstructed_margin(&self, i: usize) -> f64 {
        self.phi0 + self.phi[i].iter().sum::<f64>()
    }

    /// CSV export: a `phi0,<value>` record, then a header of feature names,
    /// then one row per record.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["phi0".to_string(), format!("{}", self.phi0)])?;
        w.write_record(&self.feature_names)?;
        for row in &self.phi {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

/// Grow the path by one split, updating the coalition-size weights.
fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / d1;
    }
}

/// Remove element `idx` from the path, undoing its effect on the weights.
fn unwind(path: &mut Vec<PathElement>, idx: usize) {
    let depth = path.len() - 1;
    let one = path[idx].one_fraction;
    let zero = path[idx].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * d1 / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in idx..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total weight the path would have with element `idx` removed.
fn unwound_sum(path: &[PathElement], idx: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[idx].one_fraction;
    let zero = path[idx].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

fn recurse(
    node: &TreeNode,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match node {
        TreeNode::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                if let Some(f) = e.feature {
                    phi[f] += w * (e.one_fraction - e.zero_fraction) * weight;
                }
            }
        }
        TreeNode::Split {
            feature: split,
            threshold,
            default_left,
            left,
            right,
            ..
        } => {
            let (fl, fr) = child_fractions(left, right);
            let (hot, cold, hot_frac, cold_frac) = if goes_left(x[*split], *threshold, *default_left) {
                (left, right, fl, fr)
            } else {
                (right, left, fr, fl)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(*split)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            recurse(
                hot,
                x,
                phi,
                path.clone(),
                hot_frac * incoming_zero,
                incoming_one,
                Some(*split),
            );
            if cold_frac * incoming_zero != 0.0 {
                recurse(cold, x, phi, path, cold_frac * incoming_zero, 0.0, Some(*split));
            }
        }
    }
}

/// Unscaled Shapley values of one tree for a dense row (`NaN` = missing).
pub fn tree_shap_single(tree: &TreeNode, x: &[f64], n_features: usize) -> Vec<f64> {
    let mut phi = vec![0.0; n_features];
    let cap = tree.depth() + 2;
    recurse(tree, x, &mut phi, Vec::with_capacity(cap), 1.0, 1.0, None);
    phi
}

/// Cover-weighted expected value of a tree, `v(empty set)`.
pub fn expected_value(tree: &TreeNode) -> f64 {
    match tree {
        TreeNode::Leaf { weight, .. } => *weight,
        TreeNode::Split { left, right, .. } => {
            let (fl, fr) = child_fractions(left, right);
            fl * expected_value(left) + fr * expected_value(right)
        }
    }
}

/// Ensemble base value `base_margin + eta * sum_t E[tree_t]`.
pub fn base_value(ens: &TreeEnsemble) -> f64 {
    let sum: f64 = ens.trees.iter().map(expected_value).sum();
    ens.base_margin + ens.eta * sum
}

fn shap_dense_row(ens: &TreeEnsemble, x: &[f64]) -> Vec<f64> {
    let p = ens.n_features;
    let mut acc = vec![0.0; p];
    for tree in &ens.trees {
        let phi = tree_shap_single(tree, x, p);
        for (a, v) in acc.iter_mut().zip(phi) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a *= ens.eta);
    acc
}

/// Attributions of every record of `ds` under `ens`.
pub fn tree_shap(ens: &TreeEnsemble, ds: &SurvivalDataset) -> Result<ShapMatrix> {
    if ds.p() != ens.n_features {
        return Err(Error::Shape {
            expected: ens.n_features,
            found: ds.p(),
        });
    }
    let p = ds.p();
    let dense = ds.dense();
    // identical rows share one evaluation; keys are exact bit patterns
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut phi: Vec<Vec<f64>> = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let row = &dense[i * p..(i + 1) * p];
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let values = match seen.get(&key) {
            Some(&first) => phi[first].clone(),
            None => {
                seen.insert(key, phi.len());
                shap_dense_row(ens, row)
            }
        };
        phi.push(values);
    }
    Ok(ShapMatrix {
        phi0: base_value(ens),
        phi,
        feature_names: ds.feature_names(),
    })
}

/// Attributions for a single feature vector.
pub fn tree_shap_row(ens: &TreeEnsemble, x: &[Option<f64>]) -> Result<Vec<f64>> {
    if x.len() != ens.n_features {
        return Err(Error::Shape {
            expected: ens.n_features,
            found: x.len(),
        });
    }
    let dense: Vec<f64> = x.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    Ok(shap_dense_row(ens, &dense))
}

/// `v(S)` for one tree; `in_coalition` is a bitmask over features.
fn conditional_expectation(node: &TreeNode, x: &[f64], in_coalition: u32) -> f64 {
    match node {
        TreeNode::Leaf { weight, .. } => *weight,
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
            ..
        } => {
            if in_coalition & (1 << feature) != 0 {
                if goes_left(x[*feature], *threshold, *default_left) {
                    conditional_expectation(left, x, in_coalition)
                } else {
                    conditional_expectation(right, x, in_coalition)
                }
            } else {
                let (fl, fr) = child_fractions(left, right);
                fl * conditional_expectation(left, x, in_coalition)
                    + fr * conditional_expectation(right, x, in_coalition)
            }
        }
    }
}

/// Shapley values by explicit enumeration of all `2^p` coalitions.
pub fn shap_brute_force(ens: &TreeEnsemble, x: &[Option<f64>]) -> Result<Vec<f64>> {
    let p = ens.n_features;
    if p > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Capacity {
            p,
            max: BRUTE_FORCE_MAX_FEATURES,
        });
    }
    if x.len() != p {
        return Err(Error::Shape {
            expected: p,
            found: x.len(),
        });
    }
    let dense: Vec<f64> = x.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let value = |s: u32| -> f64 {
        let sum: f64 = ens
            .trees
            .iter()
            .map(|t| conditional_expectation(t, &dense, s))
            .sum();
        ens.base_margin + ens.eta * sum
    };
    let values: Vec<f64> = (0..1u32 << p).map(value).collect();

    // |S|! (p - |S| - 1)! / p!
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let weights: Vec<f64> = (0..p)
        .map(|s| fact(s) * fact(p - s - 1) / fact(p))
        .collect();
    Ok((0..p)
        .map(|j| {
            let bit = 1u32 << j;
            (0..1u32 << p)
                .filter(|s| s & bit == 0)
                .map(|s| weights[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]))
                .sum()
        })
        .collect())
}
