mod common;

use coxshap::boost::{cox_grad_hess, predict_margin, train};
use coxshap::cox::neg_log_partial_likelihood;
use coxshap::{Hyperparams, TreeNode};
use proptest::prelude::*;
use rand::Rng;

fn tree_leaves_finite(t: &TreeNode) -> bool {
    match t {
        TreeNode::Leaf { weight, .. } => weight.is_finite(),
        TreeNode::Split { left, right, .. } => tree_leaves_finite(left) && tree_leaves_finite(right),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hessian_nonnegative(seed in 0u64..10_000, n in 2usize..60) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, n, 1, 0.0);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (g, h) = cox_grad_hess(&ds, &m).unwrap();
        prop_assert!(h.iter().all(|&v| v >= 0.0));
        // gradient sums to zero: each event distributes unit mass over its risk set
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..10_000, n in 2usize..50) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, n, 1, 0.0);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, h) = cox_grad_hess(&ds, &m).unwrap();
        let eps = 1e-5;
        for i in 0..n {
            let mut up = m.clone();
            let mut dn = m.clone();
            up[i] += eps;
            dn[i] -= eps;
            let (lu, gu, _) = neg_log_partial_likelihood(&ds, &up).unwrap();
            let (ld, gd, _) = neg_log_partial_likelihood(&ds, &dn).unwrap();
            let fd_g = (lu - ld) / (2.0 * eps);
            let fd_h = (gu[i] - gd[i]) / (2.0 * eps);
            prop_assert!((fd_g - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-2), "g {} vs {}", fd_g, g[i]);
            prop_assert!((fd_h - h[i]).abs() <= 1e-5 * h[i].abs().max(1e-2), "h {} vs {}", fd_h, h[i]);
        }
    }

    #[test]
    fn training_loss_non_increasing(seed in 0u64..10_000, n in 10usize..60, eta in 0.05f64..0.3) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, n, 3, 0.1);
        let hp = Hyperparams { eta, n_rounds: 15, max_depth: 3, seed, ..Hyperparams::default() };
        let ens = train(&ds, &hp).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=ens.trees.len() {
            let m = ens.truncated(k).predict(&ds).unwrap();
            let (loss, _, _) = neg_log_partial_likelihood(&ds, &m).unwrap();
            prop_assert!(loss <= last + 1e-12 * last.abs().max(1.0), "round {}: {} > {}", k, loss, last);
            last = loss;
        }
        prop_assert!(ens.trees.iter().all(tree_leaves_finite));
    }

    #[test]
    fn margin_is_eta_weighted_tree_sum(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, 40, 3, 0.2);
        let hp = Hyperparams { n_rounds: 10, subsample: 0.8, colsample_bytree: 0.7, seed, ..Hyperparams::default() };
        let ens = train(&ds, &hp).unwrap();
        for r in ds.records() {
            let dense: Vec<f64> = r.features.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            let manual = ens.base_margin + ens.eta * ens.trees.iter().map(|t| t.predict(&dense)).sum::<f64>();
            prop_assert_eq!(predict_margin(&ens, &r.features).unwrap(), manual);
        }
    }

    #[test]
    fn monotone_transform_keeps_routing(seed in 0u64..10_000, n in 10usize..60) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, n, 2, 0.0);
        let rows: Vec<Vec<f64>> = ds.records().iter()
            .map(|r| vec![r.features[0].unwrap().exp() * 3.0 + 1.0, r.features[1].unwrap()])
            .collect();
        let moved = common::dataset(&ds.times(), &ds.events(), &rows);
        let hp = Hyperparams { n_rounds: 5, max_depth: 3, seed, ..Hyperparams::default() };
        let a = train(&ds, &hp).unwrap();
        let b = train(&moved, &hp).unwrap();
        let dense_a = ds.dense();
        let dense_b = moved.dense();
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            for i in 0..n {
                prop_assert_eq!(ta.leaf_index(&dense_a[i * 2..i * 2 + 2]), tb.leaf_index(&dense_b[i * 2..i * 2 + 2]));
            }
        }
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, 30, 3, 0.1);
        let hp = Hyperparams { n_rounds: 8, subsample: 0.7, colsample_bytree: 0.6, seed, ..Hyperparams::default() };
        prop_assert_eq!(train(&ds, &hp).unwrap(), train(&ds, &hp).unwrap());
    }
}

#[test]
fn ensemble_json_round_trips() {
    let mut rng = common::rng(1);
    let ds = common::random_dataset(&mut rng, 30, 2, 0.1);
    let ens = train(&ds, &Hyperparams { n_rounds: 3, ..Hyperparams::default() }).unwrap();
    let text = serde_json::to_string(&ens).unwrap();
    let back: coxshap::TreeEnsemble = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ens);
}
