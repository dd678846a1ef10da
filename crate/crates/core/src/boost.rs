//! Gradient-boosted regression trees on the Cox partial likelihood.
//!
//! Each round computes the per-record gradient and diagonal Hessian of the
//! Breslow negative log partial likelihood at the current margins and fits
//! one tree by exact greedy second-order split search. The ensemble margin
//! `base_margin + eta * sum_t tree_t(x)` plays the role of the log relative
//! hazard.
//!
//! Splits route `x < threshold` left and `x >= threshold` right; a missing
//! value follows the node's learned default direction. Every node records its
//! Hessian mass (`cover`) and row count, which TreeSHAP uses to weight the
//! branches of features outside a coalition.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cox::RiskSets;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eta: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    pub gamma: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub n_rounds: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            eta: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            reg_lambda: 1.0,
            reg_alpha: 0.0,
            gamma: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            n_rounds: 100,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        let bad = |what: &str| Err(Error::Validation(format!("hyperparameter {what} out of range")));
        if !unit(self.eta) {
            return bad("eta");
        }
        if !unit(self.subsample) {
            return bad("subsample");
        }
        if !unit(self.colsample_bytree) {
            return bad("colsample_bytree");
        }
        if !nonneg(self.min_child_weight) {
            return bad("min_child_weight");
        }
        if !nonneg(self.reg_lambda) {
            return bad("reg_lambda");
        }
        if !nonneg(self.reg_alpha) {
            return bad("reg_alpha");
        }
        if !nonneg(self.gamma) {
            return bad("gamma");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        cover: f64,
        count: usize,
    },
    Leaf {
        #[serde(rename = "leaf")]
        weight: f64,
        cover: f64,
        count: usize,
    },
}

impl TreeNode {
    pub fn leaf(weight: f64, cover: f64, count: usize) -> Self {
        TreeNode::Leaf {
            weight,
            cover,
            count,
        }
    }

    pub fn split(feature: usize, threshold: f64, default_left: bool, left: TreeNode, right: TreeNode) -> Self {
        let cover = left.cover() + right.cover();
        let count = left.count() + right.count();
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            left: Box::new(left),
            right: Box::new(right),
            cover,
            count,
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            TreeNode::Split { count, .. } | TreeNode::Leaf { count, .. } => *count,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Leaf value for a dense row (`NaN` = missing).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight, .. } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    node = if goes_left(x[*feature], *threshold, *default_left) {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Index of the leaf reached by `x`, counting leaves left to right.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
                ..
            } => {
                if goes_left(x[*feature], *threshold, *default_left) {
                    left.leaf_index(x)
                } else {
                    left.n_leaves() + right.leaf_index(x)
                }
            }
        }
    }

    /// Features used by any split in this tree.
    pub fn features_used(&self, out: &mut Vec<usize>) {
        if let TreeNode::Split {
            feature, left, right, ..
        } = self
        {
            if !out.contains(feature) {
                out.push(*feature);
            }
            left.features_used(out);
            right.features_used(out);
        }
    }
}

#[inline]
pub(crate) fn goes_left(v: f64, threshold: f64, default_left: bool) -> bool {
    if v.is_nan() {
        default_left
    } else {
        v < threshold
    }
}

/// Branch weights used when a split's feature is not conditioned on: the
/// children's Hessian covers, falling back to row counts when either cover
/// is zero.
pub fn child_fractions(left: &TreeNode, right: &TreeNode) -> (f64, f64) {
    let (cl, cr) = (left.cover(), right.cover());
    if cl > 0.0 && cr > 0.0 {
        let t = cl + cr;
        return (cl / t, cr / t);
    }
    let (nl, nr) = (left.count() as f64, right.count() as f64);
    if nl + nr > 0.0 {
        (nl / (nl + nr), nr / (nl + nr))
    } else {
        (0.5, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<TreeNode>,
    pub eta: f64,
    pub base_margin: f64,
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Hyperparams>,
}

impl TreeEnsemble {
    pub fn empty(n_features: usize, eta: f64) -> Self {
        TreeEnsemble {
            trees: Vec::new(),
            eta,
            base_margin: 0.0,
            n_features,
            feature_names: Vec::new(),
            params: None,
        }
    }

    pub fn predict_dense(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_margin + self.eta * sum
    }

    pub fn predict_margin(&self, x: &[Option<f64>]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let dense: Vec<f64> = x.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Ok(self.predict_dense(&dense))
    }

    pub fn predict(&self, ds: &SurvivalDataset) -> Result<Vec<f64>> {
        if ds.p() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                found: ds.p(),
            });
        }
        let dense = ds.dense();
        let p = ds.p();
        Ok((0..ds.n())
            .map(|i| self.predict_dense(&dense[i * p..(i + 1) * p]))
            .collect())
    }

    /// The first `k` trees as an ensemble of their own.
    pub fn truncated(&self, k: usize) -> Self {
        TreeEnsemble {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

pub fn predict_margin(ens: &TreeEnsemble, x: &[Option<f64>]) -> Result<f64> {
    ens.predict_margin(x)
}

/// Gradient and Hessian of the Breslow negative log partial likelihood in the
/// margins: `g_i = -delta_i + sum_k p_ik`, `h_i = sum_k p_ik (1 - p_ik)` over
/// events `k` whose risk set contains `i`.
pub fn cox_grad_hess(ds: &SurvivalDataset, margins: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if margins.len() != ds.n() {
        return Err(Error::Validation(format!(
            "{} margins for {} records",
            margins.len(),
            ds.n()
        )));
    }
    Ok(RiskSets::new(&ds.times(), &ds.events()).grad_hess(margins))
}

/// Feature matrix with per-feature orderings computed once per training run.
struct Columns<'a> {
    x: &'a [f64],
    n: usize,
    p: usize,
    /// Per feature: rows with an observed value, ascending by value.
    sorted: Vec<Vec<u32>>,
}

impl<'a> Columns<'a> {
    fn new(x: &'a [f64], n: usize, p: usize) -> Self {
        let sorted = (0..p)
            .map(|j| {
                let mut rows: Vec<u32> = (0..n as u32).filter(|&i| !x[i as usize * p + j].is_nan()).collect();
                rows.sort_by(|&a, &b| {
                    x[a as usize * p + j]
                        .total_cmp(&x[b as usize * p + j])
                        .then(a.cmp(&b))
                });
                rows
            })
            .collect();
        Columns { x, n, p, sorted }
    }

    #[inline]
    fn get(&self, i: u32, j: usize) -> f64 {
        self.x[i as usize * self.p + j]
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

struct Grower<'a> {
    cols: &'a Columns<'a>,
    g: &'a [f64],
    h: &'a [f64],
    hp: &'a Hyperparams,
    features: Vec<usize>,
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

impl Grower<'_> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.hp.reg_lambda;
        if denom > 0.0 {
            -soft_threshold(g, self.hp.reg_alpha) / denom
        } else {
            0.0
        }
    }

    fn score(&self, g: f64, h: f64) -> Option<f64> {
        let denom = h + self.hp.reg_lambda;
        (denom > 0.0).then(|| g * g / denom)
    }

    fn gain(&self, gl: f64, hl: f64, gr: f64, hr: f64) -> Option<f64> {
        let mcw = self.hp.min_child_weight;
        if hl < mcw || hr < mcw {
            return None;
        }
        let l = self.score(gl, hl)?;
        let r = self.score(gr, hr)?;
        let parent = self.score(gl + gr, hl + hr)?;
        Some(0.5 * (l + r - parent) - self.hp.gamma)
    }

    fn best_split(&self, rows: &[u32], sorted: &[Vec<u32>], g_tot: f64, h_tot: f64) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for (slot, &j) in self.features.iter().enumerate() {
            let list = &sorted[slot];
            if list.len() < 2 {
                continue;
            }
            let (mut g_obs, mut h_obs) = (0.0, 0.0);
            for &i in list {
                g_obs += self.g[i as usize];
                h_obs += self.h[i as usize];
            }
            let has_missing = list.len() < rows.len();
            let (g_miss, h_miss) = (g_tot - g_obs, h_tot - h_obs);

            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..list.len() - 1 {
                let i = list[k];
                gl += self.g[i as usize];
                hl += self.h[i as usize];
                let v = self.cols.get(i, j);
                let next = self.cols.get(list[k + 1], j);
                if next == v {
                    continue;
                }
                let mut threshold = 0.5 * (v + next);
                if threshold <= v {
                    threshold = next;
                }
                let (gr, hr) = (g_obs - gl, h_obs - hl);
                let (gain, default_left) = if has_missing {
                    let left = self.gain(gl + g_miss, hl + h_miss, gr, hr);
                    let right = self.gain(gl, hl, gr + g_miss, hr + h_miss);
                    match (left, right) {
                        (Some(a), Some(b)) if b > a => (Some(b), false),
                        (Some(a), _) => (Some(a), true),
                        (None, b) => (b, false),
                    }
                } else {
                    (self.gain(gl, hl, gr, hr), true)
                };
                let Some(gain) = gain else { continue };
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: j,
                        threshold,
                        default_left,
                    });
                }
            }
        }
        best
    }

    /// `sorted[slot]` holds this node's rows with an observed value of
    /// `features[slot]`, ascending.
    fn grow(&self, rows: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> TreeNode {
        let (mut g_tot, mut h_tot) = (0.0, 0.0);
        for &i in &rows {
            g_tot += self.g[i as usize];
            h_tot += self.h[i as usize];
        }
        let make_leaf = || TreeNode::leaf(self.leaf_weight(g_tot, h_tot), h_tot, rows.len());
        if depth >= self.hp.max_depth {
            return make_leaf();
        }
        let Some(c) = self.best_split(&rows, &sorted, g_tot, h_tot) else {
            return make_leaf();
        };
        let left_of = |i: u32| goes_left(self.cols.get(i, c.feature), c.threshold, c.default_left);
        let (lrows, rrows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| left_of(i));
        let mut lsorted = Vec::with_capacity(sorted.len());
        let mut rsorted = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| left_of(i));
            lsorted.push(l);
            rsorted.push(r);
        }
        let left = self.grow(lrows, lsorted, depth + 1);
        let right = self.grow(rrows, rsorted, depth + 1);
        TreeNode::split(c.feature, c.threshold, c.default_left, left, right)
    }
}

fn grow_tree(cols: &Columns<'_>, g: &[f64], h: &[f64], hp: &Hyperparams, round_seed: u64) -> TreeNode {
    let mut rng = seed::rng(round_seed);
    let n = cols.n;
    let p = cols.p;

    let mut in_sample = vec![true; n];
    if hp.subsample < 1.0 {
        let m = ((hp.subsample * n as f64).round() as usize).clamp(1, n);
        in_sample = vec![false; n];
        for i in index::sample(&mut rng, n, m) {
            in_sample[i] = true;
        }
    }
    let mut features: Vec<usize> = (0..p).collect();
    if hp.colsample_bytree < 1.0 && p > 0 {
        let k = ((hp.colsample_bytree * p as f64).round() as usize).clamp(1, p);
        features = index::sample(&mut rng, p, k).into_vec();
        features.sort_unstable();
    }

    let rows: Vec<u32> = (0..n as u32).filter(|&i| in_sample[i as usize]).collect();
    let sorted: Vec<Vec<u32>> = features
        .iter()
        .map(|&j| {
            cols.sorted[j]
                .iter()
                .copied()
                .filter(|&i| in_sample[i as usize])
                .collect()
        })
        .collect();
    let grower = Grower {
        cols,
        g,
        h,
        hp,
        features,
    };
    grower.grow(rows, sorted, 0)
}

/// Fit one tree to gradients `g` and Hessians `h` by exact greedy
/// second-order split search.
pub fn build_tree(
    ds: &SurvivalDataset,
    g: &[f64],
    h: &[f64],
    hp: &Hyperparams,
    round_seed: u64,
) -> Result<TreeNode> {
    if g.len() != ds.n() || h.len() != ds.n() {
        return Err(Error::Validation(format!(
            "gradient/hessian length {}/{} for {} records",
            g.len(),
            h.len(),
            ds.n()
        )));
    }
    hp.validate()?;
    let x = ds.dense();
    let cols = Columns::new(&x, ds.n(), ds.p());
    Ok(grow_tree(&cols, g, h, hp, round_seed))
}

/// Seed of the tree grown in boosting round `round`.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    seed::derive_path(seed, &[seed::STREAM_TREE, round as u64])
}

/// Boost `hp.n_rounds` trees on the Cox objective.
pub fn train(ds: &SurvivalDataset, hp: &Hyperparams) -> Result<TreeEnsemble> {
    hp.validate()?;
    if ds.n_events() == 0 {
        return Err(Error::Training("training data contains no events".into()));
    }
    let n = ds.n();
    let p = ds.p();
    let x = ds.dense();
    let cols = Columns::new(&x, n, p);
    let rs = RiskSets::new(&ds.times(), &ds.events());
    let mut margins = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    for round in 0..hp.n_rounds {
        let (g, h) = rs.grad_hess(&margins);
        let tree = grow_tree(&cols, &g, &h, hp, round_seed(hp.seed, round));
        for (i, m) in margins.iter_mut().enumerate() {
            *m += hp.eta * tree.predict(&x[i * p..(i + 1) * p]);
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        trees,
        eta: hp.eta,
        base_margin: 0.0,
        n_features: p,
        feature_names: ds.feature_names(),
        params: Some(hp.clone()),
    })
}
