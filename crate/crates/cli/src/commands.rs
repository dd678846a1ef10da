use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coxshap::cox::{self, CoxModel};
use coxshap::data::{self, SurvivalDataset};
use coxshap::hazard::{self, HrEstimate};
use coxshap::metrics::{self, BoostTrainer, CoxTrainer, CvResult};
use coxshap::seed;
use coxshap::sim::{self, SimConfig};
use coxshap::tuning::{self, SearchSpace};
use coxshap::{boost, shap, Error, Hyperparams, Result, TreeEnsemble};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{Command, DataArgs, GbtArgs, ModelKind};

const SEARCH_NOTE: &str = "hyperparameters chosen by seeded random search over the declared ranges, \
                           used in place of tree-structured Parzen estimation";

pub fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            n,
            betas,
            censor,
            max_time,
            seed,
            out,
        } => simulate(
            &SimConfig {
                n: *n,
                betas: betas.clone(),
                censor_frac: *censor,
                max_time: *max_time,
                seed: *seed,
            },
            out,
        ),
        Command::FitCox { data, out } => fit_cox(cmd, data, out.as_deref()),
        Command::FitGbt { data, gbt, seed, out } => fit_gbt(cmd, data, gbt, *seed, out.as_deref()),
        Command::Tune {
            data,
            rounds,
            folds,
            seed,
            out,
            trace,
        } => tune(cmd, data, *rounds, *folds, *seed, out.as_deref(), trace.as_deref()),
        Command::Cv {
            data,
            model,
            gbt,
            folds,
            seed,
            out,
        } => cv(cmd, data, *model, gbt, *folds, *seed, out.as_deref()),
        Command::Shap { data, model, out } => shap_values(data, model, out.as_deref()),
        Command::Hr {
            data,
            gbt,
            boot,
            seed,
            out,
            csv,
        } => hr(cmd, data, gbt, *boot, *seed, out.as_deref(), csv.as_deref()),
        Command::Km { data, by, out_dir } => km(cmd, data, by.as_deref(), out_dir),
        Command::Compare {
            data,
            gbt,
            boot,
            tune_rounds,
            folds,
            seed,
            out,
        } => compare(cmd, data, gbt, *boot, *tune_rounds, *folds, *seed, out.as_deref()),
    }
}

fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, bytes)?;
            info!("wrote {}", p.display());
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn write_report(path: Option<&Path>, cmd: &Command, body: Value) -> Result<()> {
    let mut report = json!({ "command": cmd.name(), "config": config_of(cmd) });
    if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
        r.extend(b);
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn config_of(cmd: &Command) -> Value {
    serde_json::to_value(cmd).unwrap_or(Value::Null)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::FitCox { .. } => "fit-cox",
            Command::FitGbt { .. } => "fit-gbt",
            Command::Tune { .. } => "tune",
            Command::Cv { .. } => "cv",
            Command::Shap { .. } => "shap",
            Command::Hr { .. } => "hr",
            Command::Km { .. } => "km",
            Command::Compare { .. } => "compare",
        }
    }
}

fn load(data: &DataArgs) -> Result<SurvivalDataset> {
    info!("loading {}", data.data.display());
    let ds = data::load_csv(&data.data, &data.time_col, &data.event_col)?;
    info!("{} records, {} features, {} events", ds.n(), ds.p(), ds.n_events());
    Ok(ds)
}

/// Data for the linear model: rescaled, one-hot encoded, imputed.
fn cox_view(ds: &SurvivalDataset) -> Result<SurvivalDataset> {
    data::preprocess(ds, true)
}

/// Data for the tree model: rescaled and one-hot encoded, missing values kept.
fn tree_view(ds: &SurvivalDataset) -> Result<SurvivalDataset> {
    data::preprocess(ds, false)
}

/// Start from the params file (plain hyperparameters or a `tune` report),
/// apply flag overrides, then the command seed.
fn resolve_hp(gbt: &GbtArgs, seed: u64) -> Result<Hyperparams> {
    let mut hp = match &gbt.params {
        Some(path) => {
            let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            let v = v.get("best").cloned().unwrap_or(v);
            serde_json::from_value(v)?
        }
        None => Hyperparams::default(),
    };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut hp.eta, gbt.eta);
    set(&mut hp.min_child_weight, gbt.min_child_weight);
    set(&mut hp.reg_lambda, gbt.reg_lambda);
    set(&mut hp.reg_alpha, gbt.reg_alpha);
    set(&mut hp.gamma, gbt.gamma);
    set(&mut hp.subsample, gbt.subsample);
    set(&mut hp.colsample_bytree, gbt.colsample_bytree);
    if let Some(d) = gbt.max_depth {
        hp.max_depth = d;
    }
    if let Some(r) = gbt.n_rounds {
        hp.n_rounds = r;
    }
    hp.seed = seed::derive(seed, seed::STREAM_TREE);
    hp.validate()?;
    Ok(hp)
}

fn gbt_given(gbt: &GbtArgs) -> bool {
    gbt.params.is_some()
        || gbt.eta.is_some()
        || gbt.max_depth.is_some()
        || gbt.min_child_weight.is_some()
        || gbt.reg_lambda.is_some()
        || gbt.reg_alpha.is_some()
        || gbt.gamma.is_some()
        || gbt.subsample.is_some()
        || gbt.colsample_bytree.is_some()
        || gbt.n_rounds.is_some()
}

fn simulate(cfg: &SimConfig, out: &Path) -> Result<()> {
    info!("simulating {} subjects", cfg.n);
    let ds = sim::simulate(cfg)?;
    let mut buf = Vec::new();
    data::write_csv(&ds, &mut buf, "time", "event")?;
    write_bytes(Some(out), &buf)
}

#[derive(Serialize)]
struct CoxHr {
    variable: String,
    hr: f64,
    ci_low: f64,
    ci_high: f64,
    significant: bool,
}

fn per_unit_hrs(m: &CoxModel) -> Vec<CoxHr> {
    (0..m.beta.len())
        .map(|j| {
            let (b, se) = (m.beta[j], m.standard_errors[j]);
            let ci_low = (b - cox::WALD_Z * se).exp();
            let ci_high = (b + cox::WALD_Z * se).exp();
            CoxHr {
                variable: m.features[j].clone(),
                hr: b.exp(),
                ci_low,
                ci_high,
                significant: ci_low > 1.0 || ci_high < 1.0,
            }
        })
        .collect()
}

fn fit_cox(cmd: &Command, data: &DataArgs, out: Option<&Path>) -> Result<()> {
    let ds = cox_view(&load(data)?)?;
    info!("fitting Cox model");
    let m = cox::fit_coxph(&ds)?;
    info!("converged after {} iterations", m.iterations);
    write_report(
        out,
        cmd,
        json!({ "hazard_ratios": per_unit_hrs(&m), "model": m }),
    )
}

fn fit_gbt(cmd: &Command, data: &DataArgs, gbt: &GbtArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let ds = tree_view(&load(data)?)?;
    let hp = resolve_hp(gbt, seed)?;
    info!("training {} trees", hp.n_rounds);
    let ens = boost::train(&ds, &hp)?;
    write_report(out, cmd, json!({ "model": ens }))
}

fn tune(
    cmd: &Command,
    data: &DataArgs,
    rounds: usize,
    folds: usize,
    seed: u64,
    out: Option<&Path>,
    trace: Option<&Path>,
) -> Result<()> {
    let ds = tree_view(&load(data)?)?;
    info!("random search: {rounds} evaluations, {folds}-fold CV");
    let space = SearchSpace::default();
    let res = tuning::random_search(&ds, &space, rounds, folds, seed)?;
    info!("best mean C-index {:.4}", res.best_score);
    if let Some(path) = trace {
        let mut buf = Vec::new();
        res.write_trace(&mut buf)?;
        write_bytes(Some(path), &buf)?;
    }
    let failed = res.trace.iter().filter(|e| e.mean.is_none()).count();
    write_report(
        out,
        cmd,
        json!({
            "note": SEARCH_NOTE,
            "search_space": space,
            "best": res.best,
            "best_score": finite_or_null(res.best_score),
            "evaluations": res.trace.len(),
            "failed_evaluations": failed,
        }),
    )
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cv(
    cmd: &Command,
    data: &DataArgs,
    model: ModelKind,
    gbt: &GbtArgs,
    folds: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let raw = load(data)?;
    let fold_seed = tuning::evaluation_seed(seed);
    info!("{folds}-fold cross-validation");
    let (res, hp): (CvResult, Option<Hyperparams>) = match model {
        ModelKind::Cox => (metrics::kfold_cv(&cox_view(&raw)?, folds, &CoxTrainer, fold_seed)?, None),
        ModelKind::Gbt => {
            let hp = resolve_hp(gbt, seed)?;
            let r = metrics::kfold_cv(&tree_view(&raw)?, folds, &BoostTrainer(hp.clone()), fold_seed)?;
            (r, Some(hp))
        }
    };
    write_report(
        out,
        cmd,
        json!({
            "hyperparameters": hp,
            "fold_scores": res.fold_scores,
            "mean": res.mean,
            "std": res.std,
        }),
    )
}

fn shap_values(data: &DataArgs, model: &Path, out: Option<&Path>) -> Result<()> {
    let ds = tree_view(&load(data)?)?;
    let v: Value = serde_json::from_str(&fs::read_to_string(model)?)?;
    let ens: TreeEnsemble = serde_json::from_value(v.get("model").cloned().unwrap_or(v))?;
    if !ens.feature_names.is_empty() && ens.feature_names != ds.feature_names() {
        return Err(Error::Validation(format!(
            "model features {:?} do not match data features {:?}",
            ens.feature_names,
            ds.feature_names()
        )));
    }
    info!("computing TreeSHAP for {} records", ds.n());
    let phi = shap::tree_shap(&ens, &ds)?;
    let mut buf = Vec::new();
    phi.write_csv(&mut buf)?;
    write_bytes(out, &buf)
}

fn hr(
    cmd: &Command,
    data: &DataArgs,
    gbt: &GbtArgs,
    boot: usize,
    seed: u64,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let ds = tree_view(&load(data)?)?;
    let hp = resolve_hp(gbt, seed)?;
    info!("bootstrapping {boot} replicates");
    let est = hazard::bootstrap_hr(&ds, &hp, boot, seed)?;
    if let Some(path) = csv {
        let mut buf = Vec::new();
        hazard::write_hr_csv(&est, &mut buf)?;
        write_bytes(Some(path), &buf)?;
    }
    write_report(out, cmd, json!({ "hyperparameters": hp, "estimates": est }))
}

fn km(cmd: &Command, data: &DataArgs, by: Option<&str>, out_dir: &Path) -> Result<()> {
    let ds = load(data)?;
    fs::create_dir_all(out_dir)?;
    let groups: Vec<(String, String, Vec<usize>)> = match by {
        None => vec![("all".into(), "km_all.csv".into(), (0..ds.n()).collect())],
        Some(name) => {
            let j = ds
                .feature_index(name)
                .ok_or_else(|| Error::Validation(format!("no column named '{name}'")))?;
            let split = hazard::median_split(&ds, j)?;
            let binary = split.rule.contains(" = 1 vs ");
            let (hi, lo) = if binary {
                (format!("{name}=1"), format!("{name}=0"))
            } else {
                (format!("{name}_high"), format!("{name}_low"))
            };
            vec![
                (hi.clone(), format!("km_{hi}.csv"), split.s1),
                (lo.clone(), format!("km_{lo}.csv"), split.s2),
            ]
        }
    };
    let mut summary = Vec::new();
    for (label, file, idx) in groups {
        let sub = ds.subset(&idx)?;
        let curve = metrics::km_estimate(&sub.times(), &sub.events())?;
        let path: PathBuf = out_dir.join(&file);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        write_bytes(Some(&path), &buf)?;
        summary.push(json!({
            "group": label,
            "file": file,
            "n": sub.n(),
            "events": sub.n_events(),
            "median_survival": curve.median_survival,
        }));
    }
    write_report(Some(&out_dir.join("km_summary.json")), cmd, json!({ "groups": summary }))
}

#[allow(clippy::too_many_arguments)]
fn compare(
    cmd: &Command,
    data: &DataArgs,
    gbt: &GbtArgs,
    boot: usize,
    tune_rounds: usize,
    folds: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let raw = load(data)?;
    let cox_ds = cox_view(&raw)?;
    let tree_ds = tree_view(&raw)?;

    info!("fitting Cox model");
    let model = cox::fit_coxph(&cox_ds)?;

    let (hp, tuning_info) = if gbt_given(gbt) {
        (resolve_hp(gbt, seed)?, Value::Null)
    } else {
        info!("random search: {tune_rounds} evaluations, {folds}-fold CV");
        let res = tuning::random_search(&tree_ds, &SearchSpace::default(), tune_rounds, folds, seed)?;
        let info = json!({
            "note": SEARCH_NOTE,
            "evaluations": res.trace.len(),
            "best_score": finite_or_null(res.best_score),
        });
        (res.best, info)
    };

    info!("bootstrapping {boot} replicates");
    let ml = hazard::bootstrap_hr(&tree_ds, &hp, boot, seed)?;

    let mut rows = Vec::new();
    for (j, name) in tree_ds.feature_names().iter().enumerate() {
        let m: &HrEstimate = &ml[j];
        let cj = cox_ds
            .feature_index(name)
            .ok_or_else(|| Error::Internal(format!("'{name}' missing from the Cox design")))?;
        let split = hazard::median_split(&cox_ds, cj)?;
        let c = cox::hazard_ratio_coxph(&model, &cox_ds, cj, &split)?;
        let direction = (c.point > 1.0) == (m.point > 1.0);
        rows.push(json!({
            "variable": name,
            "rule": split.rule,
            "cox": { "hr": c.point, "ci_low": c.ci_low, "ci_high": c.ci_high, "significant": c.significant },
            "ml": {
                "hr_point": m.point,
                "ci_low": m.ci_low,
                "ci_high": m.ci_high,
                "significant": m.significant,
                "full_data": m.full_data,
                "n_boot": m.n_boot,
            },
            "agree_direction": direction,
            "agree_significance": c.significant == m.significant,
        }));
    }
    let all_agree = rows
        .iter()
        .all(|r| r["agree_direction"] == json!(true) && r["agree_significance"] == json!(true));
    write_report(
        out,
        cmd,
        json!({
            "hyperparameters": hp,
            "tuning": tuning_info,
            "cox_model": model,
            "variables": rows,
            "all_agree": all_agree,
        }),
    )
}
