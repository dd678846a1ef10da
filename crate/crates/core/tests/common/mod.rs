#![allow(dead_code)]

use coxshap::boost::{TreeEnsemble, TreeNode};
use coxshap::SurvivalDataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dataset from dense rows; `NaN` becomes a missing value.
pub fn dataset(times: &[f64], events: &[bool], rows: &[Vec<f64>]) -> SurvivalDataset {
    let p = rows.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows = rows
        .iter()
        .map(|r| r.iter().map(|&v| if v.is_nan() { None } else { Some(v) }).collect())
        .collect();
    SurvivalDataset::from_rows(times, events, rows, &names).unwrap()
}

/// Random survival data with integer-rounded times (to force ties) and a
/// guaranteed event in row 0.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, missing: f64) -> SurvivalDataset {
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..=(n as u32 / 2 + 2)) as f64).collect();
    let mut events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    events[0] = true;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    if rng.random_bool(missing) {
                        f64::NAN
                    } else {
                        rng.random_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect();
    dataset(&times, &events, &rows)
}

fn random_tree(rng: &mut ChaCha8Rng, p: usize, depth: usize) -> TreeNode {
    if depth == 0 || rng.random_bool(0.25) {
        // occasional zero cover exercises the count fallback
        let cover = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.1..5.0) };
        return TreeNode::leaf(rng.random_range(-1.0..1.0), cover, rng.random_range(1..20));
    }
    let feature = rng.random_range(0..p);
    let threshold = rng.random_range(-1.0..1.0);
    let default_left = rng.random_bool(0.5);
    let left = random_tree(rng, p, depth - 1);
    let right = random_tree(rng, p, depth - 1);
    TreeNode::split(feature, threshold, default_left, left, right)
}

/// Random ensemble with `p` features, trees up to `max_depth`.
pub fn random_ensemble(rng: &mut ChaCha8Rng, p: usize, max_depth: usize, max_trees: usize) -> TreeEnsemble {
    let n_trees = rng.random_range(1..=max_trees);
    let mut ens = TreeEnsemble::empty(p, rng.random_range(0.05..1.0));
    ens.base_margin = rng.random_range(-0.5..0.5);
    ens.trees = (0..n_trees).map(|_| random_tree(rng, p, max_depth)).collect();
    ens
}

/// Feature vector with values around the random thresholds and some missing.
pub fn random_row(rng: &mut ChaCha8Rng, p: usize) -> Vec<Option<f64>> {
    (0..p)
        .map(|_| if rng.random_bool(0.15) { None } else { Some(rng.random_range(-1.5..1.5)) })
        .collect()
}

/// O(n^2) Harrell C with the same tie conventions as the library.
pub fn c_index_pairs(times: &[f64], events: &[bool], risk: &[f64]) -> Option<f64> {
    let n = times.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j || !events[i] {
                continue;
            }
            let comparable = times[i] < times[j] || (times[i] == times[j] && !events[j]);
            if !comparable {
                continue;
            }
            den += 1.0;
            if risk[i] > risk[j] {
                num += 1.0;
            } else if risk[i] == risk[j] {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    coxshap::seed::rng(seed)
}
