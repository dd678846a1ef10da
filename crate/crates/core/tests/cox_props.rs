mod common;

use coxshap::cox::{fit_coxph, hazard_ratio_coxph, neg_log_partial_likelihood};
use coxshap::sim::{simulate, SimConfig};
use coxshap::{SubgroupSplit, SurvivalDataset};
use proptest::prelude::*;
use rand::Rng;

/// Well-posed random Cox data: continuous covariates, moderate true effects.
fn cox_data(seed: u64, n: usize, p: usize) -> SurvivalDataset {
    let mut rng = common::rng(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let times: Vec<f64> = rows
        .iter()
        .map(|x| {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            -(1.0 - rng.random::<f64>()).ln() / eta.exp()
        })
        .collect();
    let events: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.8)).collect();
    common::dataset(&times, &events, &rows)
}

fn transform_column(ds: &SurvivalDataset, j: usize, f: impl Fn(f64) -> f64) -> SurvivalDataset {
    let rows: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| r.features.iter().enumerate().map(|(k, v)| if k == j { f(v.unwrap()) } else { v.unwrap() }).collect())
        .collect();
    common::dataset(&ds.times(), &ds.events(), &rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn shift_invariance(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let ds = cox_data(seed, 80, 2);
        let a = fit_coxph(&ds).unwrap();
        let b = fit_coxph(&transform_column(&ds, 0, |x| x + shift)).unwrap();
        for j in 0..2 {
            prop_assert!((a.beta[j] - b.beta[j]).abs() < 1e-6, "{:?} vs {:?}", a.beta, b.beta);
        }
    }

    #[test]
    fn scale_equivariance(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let ds = cox_data(seed, 80, 2);
        let a = fit_coxph(&ds).unwrap();
        let b = fit_coxph(&transform_column(&ds, 1, |x| x * c)).unwrap();
        prop_assert!((a.beta[1] / c - b.beta[1]).abs() < 1e-6);
        prop_assert!((a.beta[0] - b.beta[0]).abs() < 1e-6);
    }

    #[test]
    fn fitted_likelihood_beats_null(seed in 0u64..10_000, n in 20usize..80) {
        let m = fit_coxph(&cox_data(seed, n, 3)).unwrap();
        prop_assert!(m.log_partial_likelihood >= m.loglik_null);
        prop_assert!(m.standard_errors.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn loss_matches_fit_loglik(seed in 0u64..10_000) {
        let ds = cox_data(seed, 60, 2);
        let m = fit_coxph(&ds).unwrap();
        let margins = m.predict(&ds).unwrap();
        let (loss, _, _) = neg_log_partial_likelihood(&ds, &margins).unwrap();
        prop_assert!((loss + m.log_partial_likelihood).abs() < 1e-8 * (1.0 + loss.abs()));
    }

    #[test]
    fn binary_pure_subgroups_give_exp_beta(seed in 0u64..1000) {
        let ds = simulate(&SimConfig { n: 120, seed, ..SimConfig::default() }).unwrap();
        let m = fit_coxph(&ds).unwrap();
        for j in 0..ds.p() {
            let col = ds.column(j);
            let s1 = (0..ds.n()).filter(|&i| col[i] == Some(1.0)).collect();
            let s2 = (0..ds.n()).filter(|&i| col[i] == Some(0.0)).collect();
            let hr = hazard_ratio_coxph(&m, &ds, j, &SubgroupSplit::new(s1, s2, "1 vs 0").unwrap()).unwrap();
            prop_assert_eq!(hr.point, m.beta[j].exp());
            prop_assert!(hr.ci_low <= hr.point && hr.point <= hr.ci_high);
        }
    }
}

#[test]
fn null_betas_are_not_significant() {
    let ds = simulate(&SimConfig {
        betas: vec![0.0, 0.0, 0.0],
        seed: 3,
        ..SimConfig::default()
    })
    .unwrap();
    let m = fit_coxph(&ds).unwrap();
    for j in 0..3 {
        assert!(m.beta[j].abs() < 3.0 * m.standard_errors[j], "{:?}", m);
    }
}
