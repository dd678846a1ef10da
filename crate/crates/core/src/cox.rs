//! Linear Cox proportional-hazards regression.
//!
//! The partial likelihood uses the Breslow approximation for tied event
//! times: every event at time `t` shares the risk set `{j : t_j >= t}`. The
//! same criterion drives the boosted model in [`crate::boost`], so both model
//! families maximize the same objective.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::hazard::{HrEstimate, SubgroupSplit};

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.959964;

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 20;

/// Risk-set structure of a fixed vector of times: records sorted by
/// descending time and grouped by equal time.
#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    /// Record indices by descending time.
    order: Vec<usize>,
    /// `(start, end)` ranges into `order`, one per distinct time, descending.
    groups: Vec<(usize, usize)>,
    events: Vec<bool>,
}

impl RiskSets {
    pub(crate) fn new(times: &[f64], events: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || times[order[k]] != times[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        RiskSets {
            order,
            groups,
            events: events.to_vec(),
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.order.len()
    }

    /// Shifted risk-set sums `S_g = sum_{t_j >= t_g} exp(m_j - c)` per group
    /// (descending), returned with the shift `c = max m`.
    fn risk_sums(&self, margins: &[f64]) -> (Vec<f64>, f64) {
        let c = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = if c.is_finite() { c } else { 0.0 };
        let mut acc = 0.0;
        let sums = self
            .groups
            .iter()
            .map(|&(s, e)| {
                for &i in &self.order[s..e] {
                    acc += (margins[i] - c).exp();
                }
                acc
            })
            .collect();
        (sums, c)
    }

    fn group_events(&self, g: usize) -> usize {
        let (s, e) = self.groups[g];
        self.order[s..e].iter().filter(|&&i| self.events[i]).count()
    }

    /// Negative log partial likelihood of `margins`.
    pub(crate) fn loss(&self, margins: &[f64]) -> f64 {
        let (sums, c) = self.risk_sums(margins);
        let mut loss = 0.0;
        for (g, &(s, e)) in self.groups.iter().enumerate() {
            let log_s = sums[g].ln() + c;
            for &i in &self.order[s..e] {
                if self.events[i] {
                    loss -= margins[i] - log_s;
                }
            }
        }
        loss
    }

    /// Gradient and diagonal Hessian of [`RiskSets::loss`] in the margins.
    pub(crate) fn grad_hess(&self, margins: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let (sums, c) = self.risk_sums(margins);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        // sum over events i with t_i <= t of 1/S(t_i) and 1/S(t_i)^2;
        // accumulated from the earliest time upwards.
        let mut a = 0.0;
        let mut b = 0.0;
        for g in (0..self.groups.len()).rev() {
            let d = self.group_events(g) as f64;
            if d > 0.0 {
                a += d / sums[g];
                b += d / (sums[g] * sums[g]);
            }
            let (s, e) = self.groups[g];
            for &i in &self.order[s..e] {
                let w = (margins[i] - c).exp();
                let delta = if self.events[i] { 1.0 } else { 0.0 };
                grad[i] = w * a - delta;
                hess[i] = (w * a - w * w * b).max(0.0);
            }
        }
        (grad, hess)
    }
}

/// Negative log partial likelihood (Breslow ties) with its exact gradient and
/// diagonal Hessian in the margins.
pub fn neg_log_partial_likelihood(
    ds: &SurvivalDataset,
    margins: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if margins.len() != ds.n() {
        return Err(Error::Validation(format!(
            "{} margins for {} records",
            margins.len(),
            ds.n()
        )));
    }
    let rs = RiskSets::new(&ds.times(), &ds.events());
    let loss = rs.loss(margins);
    let (g, h) = rs.grad_hess(margins);
    Ok((loss, g, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub features: Vec<String>,
    pub beta: Vec<f64>,
    #[serde(rename = "se")]
    pub standard_errors: Vec<f64>,
    #[serde(rename = "loglik")]
    pub log_partial_likelihood: f64,
    /// Log partial likelihood at beta = 0.
    pub loglik_null: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CoxModel {
    /// Linear predictor `x . beta`.
    pub fn linear_predictor(&self, x: &[Option<f64>]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::Shape {
                expected: self.beta.len(),
                found: x.len(),
            });
        }
        x.iter()
            .zip(&self.beta)
            .enumerate()
            .try_fold(0.0, |acc, (j, (v, b))| match v {
                Some(v) => Ok(acc + v * b),
                None => Err(Error::Validation(format!(
                    "missing value for '{}' in linear predictor",
                    self.features[j]
                ))),
            })
    }

    pub fn predict(&self, ds: &SurvivalDataset) -> Result<Vec<f64>> {
        ds.records()
            .iter()
            .map(|r| self.linear_predictor(&r.features))
            .collect()
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone)]
struct SymMatrix {
    p: usize,
    a: Vec<f64>,
}

impl SymMatrix {
    fn zeros(p: usize) -> Self {
        SymMatrix { p, a: vec![0.0; p * p] }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.p + j]
    }

    /// Lower Cholesky factor. On failure returns the index of the first
    /// column whose pivot is not positive relative to its diagonal.
    fn cholesky(&self) -> std::result::Result<Vec<f64>, usize> {
        let p = self.p;
        let mut l = vec![0.0; p * p];
        for j in 0..p {
            let mut d = self.at(j, j);
            for k in 0..j {
                d -= l[j * p + k] * l[j * p + k];
            }
            let scale = self.at(j, j).abs();
            if !(d > 1e-12 * scale) || !(scale > 0.0) || !d.is_finite() {
                return Err(j);
            }
            let d = d.sqrt();
            l[j * p + j] = d;
            for i in (j + 1)..p {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                l[i * p + j] = s / d;
            }
        }
        Ok(l)
    }
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            y[i] -= l[i * p + k] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    for i in (0..p).rev() {
        for k in (i + 1)..p {
            y[i] -= l[k * p + i] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    y
}

fn cholesky_inverse_diag(l: &[f64], p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            cholesky_solve(l, p, &e)[j]
        })
        .collect()
}

struct CoxEval {
    loglik: f64,
    score: Vec<f64>,
    info: SymMatrix,
}

/// Centered design matrix plus risk sets; centering leaves beta unchanged and
/// keeps the weighted covariance accumulations well conditioned.
struct CoxProblem {
    rs: RiskSets,
    x: Vec<f64>,
    n: usize,
    p: usize,
}

impl CoxProblem {
    fn new(ds: &SurvivalDataset) -> Result<Self> {
        let n = ds.n();
        let p = ds.p();
        let mut x = vec![0.0; n * p];
        for (i, r) in ds.records().iter().enumerate() {
            for (j, v) in r.features.iter().enumerate() {
                x[i * p + j] = v.ok_or_else(|| {
                    Error::Validation(format!(
                        "missing value in column '{}' (record {}); impute before fitting",
                        ds.specs()[j].name,
                        i + 1
                    ))
                })?;
            }
        }
        for j in 0..p {
            let mean = (0..n).map(|i| x[i * p + j]).sum::<f64>() / n as f64;
            for i in 0..n {
                x[i * p + j] -= mean;
            }
        }
        Ok(CoxProblem {
            rs: RiskSets::new(&ds.times(), &ds.events()),
            x,
            n,
            p,
        })
    }

    fn margins(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.x[i * self.p..(i + 1) * self.p]
                    .iter()
                    .zip(beta)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn eval(&self, beta: &[f64]) -> CoxEval {
        let p = self.p;
        let m = self.margins(beta);
        let c = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = if c.is_finite() { c } else { 0.0 };
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = SymMatrix::zeros(p);
        for &(s, e) in &self.rs.groups {
            for &i in &self.rs.order[s..e] {
                let w = (m[i] - c).exp();
                let xi = &self.x[i * p..(i + 1) * p];
                s0 += w;
                for a in 0..p {
                    s1[a] += w * xi[a];
                    for b in 0..=a {
                        s2[a * p + b] += w * xi[a] * xi[b];
                    }
                }
            }
            let mut d = 0usize;
            for &i in &self.rs.order[s..e] {
                if self.rs.events[i] {
                    d += 1;
                    loglik += m[i];
                    for a in 0..p {
                        score[a] += self.x[i * p + a];
                    }
                }
            }
            if d == 0 {
                continue;
            }
            let df = d as f64;
            loglik -= df * (s0.ln() + c);
            for a in 0..p {
                let xa = s1[a] / s0;
                score[a] -= df * xa;
                for b in 0..=a {
                    let v = df * (s2[a * p + b] / s0 - xa * s1[b] / s0);
                    info.a[a * p + b] += v;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info.a[b * p + a] = info.a[a * p + b];
            }
        }
        CoxEval {
            loglik,
            score,
            info,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fit by Newton-Raphson on the full coefficient vector with step-halving.
///
/// Convergence requires the score max-norm below [`SCORE_TOLERANCE`] times
/// `1 + |loglik|` and a
/// vanishing Newton step; a likelihood that keeps increasing towards an
/// infinite coefficient (monotone likelihood) is reported as
/// [`Error::NonConvergence`].
pub fn fit_coxph(ds: &SurvivalDataset) -> Result<CoxModel> {
    if ds.n_events() == 0 {
        return Err(Error::Validation("cannot fit a Cox model without events".into()));
    }
    let prob = CoxProblem::new(ds)?;
    let p = prob.p;
    let names = ds.feature_names();

    let mut beta = vec![0.0; p];
    let mut cur = prob.eval(&beta);
    let loglik_null = cur.loglik;
    let mut chol = cur.info.cholesky().map_err(|j| Error::Singular {
        column: names[j].clone(),
    })?;
    let non_convergence = |iterations: usize, beta: &[f64]| Error::NonConvergence {
        iterations,
        beta: beta.to_vec(),
    };

    let mut iterations = 0;
    loop {
        let step = cholesky_solve(&chol, p, &cur.score);
        let step_small = step
            .iter()
            .zip(&beta)
            .all(|(s, b)| s.abs() <= 1e-6 * b.abs().max(1.0));
        let score_small = max_abs(&cur.score) < SCORE_TOLERANCE * (1.0 + cur.loglik.abs());
        if score_small && step_small {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(non_convergence(iterations, &beta));
        }
        iterations += 1;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let next = prob.eval(&cand);
            if next.loglik.is_finite() && next.loglik >= cur.loglik {
                accepted = Some((cand, next));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            // No ascent left at machine precision.
            if score_small || step_small {
                break;
            }
            return Err(non_convergence(iterations, &beta));
        };
        log::debug!("newton iteration {iterations}: loglik {:.10}", next.loglik);
        beta = cand;
        cur = next;
        chol = cur
            .info
            .cholesky()
            .map_err(|_| non_convergence(iterations, &beta))?;
    }

    let standard_errors = cholesky_inverse_diag(&chol, p)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    Ok(CoxModel {
        features: names,
        beta,
        standard_errors,
        log_partial_likelihood: cur.loglik,
        loglik_null,
        converged: true,
        iterations,
    })
}

fn subgroup_mean(ds: &SurvivalDataset, feature: usize, idx: &[usize]) -> Result<f64> {
    let vals: Vec<f64> = idx
        .iter()
        .filter_map(|&i| ds.records()[i].features[feature])
        .collect();
    if vals.is_empty() {
        return Err(Error::Split("subgroup has no observed values".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Subgroup hazard ratio `exp(beta_j * (mean_S1 x_j - mean_S2 x_j))` with the
/// interval obtained by substituting the Wald bounds of `beta_j`.
pub fn hazard_ratio_coxph(
    model: &CoxModel,
    ds: &SurvivalDataset,
    feature: usize,
    split: &SubgroupSplit,
) -> Result<HrEstimate> {
    if feature >= model.beta.len() || feature >= ds.p() {
        return Err(Error::Validation(format!("feature index {feature} out of range")));
    }
    if split.s1.is_empty() || split.s2.is_empty() {
        return Err(Error::Split("empty subgroup".into()));
    }
    let diff = subgroup_mean(ds, feature, &split.s1)? - subgroup_mean(ds, feature, &split.s2)?;
    let b = model.beta[feature];
    let se = model.standard_errors[feature];
    let point = (b * diff).exp();
    let a = ((b - WALD_Z * se) * diff).exp();
    let c = ((b + WALD_Z * se) * diff).exp();
    let (ci_low, ci_high) = if a <= c { (a, c) } else { (c, a) };
    Ok(HrEstimate {
        variable: ds.specs()[feature].name.clone(),
        point,
        ci_low,
        ci_high,
        significant: ci_low > 1.0 || ci_high < 1.0,
        n_boot: 0,
        full_data: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalDataset;

    fn ds_from(times: &[f64], events: &[bool], x: &[Vec<f64>]) -> SurvivalDataset {
        let p = x.first().map_or(0, Vec::len);
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = x.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        SurvivalDataset::from_rows(times, events, rows, &names).unwrap()
    }

    #[test]
    fn all_censored_loss_is_zero() {
        let rs = RiskSets::new(&[1.0, 2.0, 3.0], &[false, false, false]);
        let m = [0.3, -0.1, 2.0];
        assert_eq!(rs.loss(&m), 0.0);
        let (g, h) = rs.grad_hess(&m);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_event_loss_is_log_risk_set_size() {
        // event at the earliest time, risk set is everyone
        let rs = RiskSets::new(&[1.0, 2.0, 3.0, 4.0, 5.0], &[true, false, false, false, false]);
        let loss = rs.loss(&[0.0; 5]);
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ties_share_one_denominator() {
        // two tied events at t=1 over a risk set of 3: loss = 2 log 3
        let rs = RiskSets::new(&[1.0, 1.0, 2.0], &[true, true, false]);
        assert!((rs.loss(&[0.0; 3]) - 2.0 * 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let ds = ds_from(
            &[1.0, 2.0, 3.0, 4.0],
            &[true, true, false, true],
            &[vec![0.5, 1.0], vec![0.1, 1.0], vec![0.9, 1.0], vec![0.3, 1.0]],
        );
        match fit_coxph(&ds) {
            Err(Error::Singular { column }) => assert_eq!(column, "x1"),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn monotone_likelihood_does_not_converge() {
        // the x=1 subject dies first and the x=0 subject is censored later,
        // so the partial likelihood e^b / (e^b + 1) increases without bound.
        let ds = ds_from(&[1.0, 2.0], &[true, false], &[vec![1.0], vec![0.0]]);
        assert!(matches!(fit_coxph(&ds), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn matches_grid_search_optimum() {
        // finite optimum; compare to a dense grid search of the 1-d likelihood
        let ds = ds_from(
            &[1.0, 2.0, 3.0, 4.0],
            &[true, true, true, false],
            &[vec![1.0], vec![0.0], vec![1.0], vec![0.0]],
        );
        let m = fit_coxph(&ds).unwrap();
        let rs = RiskSets::new(&ds.times(), &ds.events());
        let x = [1.0, 0.0, 1.0, 0.0];
        let ll = |b: f64| -rs.loss(&x.map(|v| v * b));
        let best = (-4000..=4000)
            .map(|k| k as f64 * 1e-3)
            .max_by(|a, b| ll(*a).total_cmp(&ll(*b)))
            .unwrap();
        assert!((m.beta[0] - best).abs() < 1e-3);
        assert!(m.log_partial_likelihood >= m.loglik_null);
    }

    #[test]
    fn hazard_ratio_examples() {
        let ds = ds_from(
            &[1.0, 2.0, 3.0, 4.0],
            &[true, true, true, false],
            &[vec![1.0, 0.8], vec![0.0, 0.3], vec![1.0, 0.8], vec![0.0, 0.3]],
        );
        let split = SubgroupSplit::new(vec![0, 2], vec![1, 3], "test").unwrap();
        let model = CoxModel {
            features: vec!["x0".into(), "x1".into()],
            beta: vec![0.5, 2.0],
            standard_errors: vec![0.1, 0.1],
            log_partial_likelihood: 0.0,
            loglik_null: 0.0,
            converged: true,
            iterations: 0,
        };
        let hr = hazard_ratio_coxph(&model, &ds, 0, &split).unwrap();
        assert_eq!(hr.point, 0.5f64.exp());
        assert!(hr.significant);
        let hr = hazard_ratio_coxph(&model, &ds, 1, &split).unwrap();
        assert!((hr.point - 1f64.exp()).abs() < 1e-12);

        let zero = CoxModel {
            beta: vec![0.0, 0.0],
            ..model
        };
        let hr = hazard_ratio_coxph(&zero, &ds, 0, &split).unwrap();
        assert_eq!(hr.point, 1.0);
        assert!(!hr.significant);
    }
}
