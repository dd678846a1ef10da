//! Survival datasets: representation, CSV ingestion, preprocessing, the
//! signed-time encoding used by boosted Cox objectives, and bootstrap
//! resampling.
//!
//! Features are stored as `Option<f64>`; `None` is a missing value.
//! Categorical columns hold the index of the category (into
//! [`FeatureSpec::categories`]) until [`preprocess`] expands them into one-hot
//! binary columns.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Category labels, in the order used for the stored indices.
    pub categories: Vec<String>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            observed_min: min,
            observed_max: max,
            categories: Vec::new(),
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Binary,
            observed_min: 0.0,
            observed_max: 1.0,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            observed_min: 0.0,
            observed_max: categories.len().saturating_sub(1) as f64,
            categories,
        }
    }

    /// Infer a numeric spec from observed values: binary when every observed
    /// value is 0 or 1, continuous otherwise.
    pub fn infer(name: impl Into<String>, values: &[Option<f64>]) -> Self {
        let observed: Vec<f64> = values.iter().flatten().copied().collect();
        let (min, max) = observed
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let is_binary = !observed.is_empty() && observed.iter().all(|&v| v == 0.0 || v == 1.0);
        if is_binary {
            FeatureSpec::binary(name)
        } else if observed.is_empty() {
            FeatureSpec::continuous(name, 0.0, 0.0)
        } else {
            FeatureSpec::continuous(name, min, max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    /// Observed time in days; must be positive.
    pub time: f64,
    /// `true` when the death was observed, `false` when right-censored.
    pub event: bool,
    pub features: Vec<Option<f64>>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, features: Vec<Option<f64>>) -> Self {
        SurvivalRecord {
            time,
            event,
            features,
        }
    }
}

/// Survival time with the censoring flag folded into its sign: positive for
/// an observed event, negative for a censored record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedTime {
    pub value: f64,
}

pub fn encode_signed_time(r: &SurvivalRecord) -> Result<SignedTime> {
    if !(r.time > 0.0) || !r.time.is_finite() {
        return Err(Error::Validation(format!(
            "survival time must be positive and finite, got {}",
            r.time
        )));
    }
    let value = if r.event { r.time } else { -r.time };
    Ok(SignedTime { value })
}

/// An immutable collection of survival records sharing one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    specs: Vec<FeatureSpec>,
    degenerate: bool,
}

impl SurvivalDataset {
    /// Build a dataset, requiring at least one record and at least one event.
    pub fn new(records: Vec<SurvivalRecord>, specs: Vec<FeatureSpec>) -> Result<Self> {
        let ds = Self::new_degenerate(records, specs)?;
        if ds.n_events() == 0 {
            return Err(Error::Validation(
                "dataset contains no observed events".into(),
            ));
        }
        Ok(SurvivalDataset {
            degenerate: false,
            ..ds
        })
    }

    /// Build a dataset that is allowed to contain no events (for example a
    /// bootstrap resample); all other invariants are still checked.
    pub fn new_degenerate(records: Vec<SurvivalRecord>, specs: Vec<FeatureSpec>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("dataset has no records".into()));
        }
        let p = specs.len();
        for (i, r) in records.iter().enumerate() {
            if !(r.time > 0.0) || !r.time.is_finite() {
                return Err(Error::Validation(format!(
                    "record {}: time must be positive and finite, got {}",
                    i + 1,
                    r.time
                )));
            }
            if r.features.len() != p {
                return Err(Error::Shape {
                    expected: p,
                    found: r.features.len(),
                });
            }
            for (j, v) in r.features.iter().enumerate() {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "record {}: feature '{}' is not finite",
                            i + 1,
                            specs[j].name
                        )));
                    }
                    if specs[j].kind == FeatureKind::Binary && *v != 0.0 && *v != 1.0 {
                        return Err(Error::Validation(format!(
                            "record {}: binary feature '{}' has value {}",
                            i + 1,
                            specs[j].name,
                            v
                        )));
                    }
                }
            }
        }
        let degenerate = !records.iter().any(|r| r.event);
        Ok(SurvivalDataset {
            records,
            specs,
            degenerate,
        })
    }

    /// Convenience constructor from parallel vectors; feature specs are
    /// inferred with [`FeatureSpec::infer`].
    pub fn from_rows(
        times: &[f64],
        events: &[bool],
        rows: Vec<Vec<Option<f64>>>,
        names: &[&str],
    ) -> Result<Self> {
        if times.len() != events.len() || times.len() != rows.len() {
            return Err(Error::Validation(
                "times, events and rows must have equal lengths".into(),
            ));
        }
        let specs = (0..names.len())
            .map(|j| {
                let col: Vec<Option<f64>> =
                    rows.iter().map(|r| r.get(j).copied().flatten()).collect();
                FeatureSpec::infer(names[j], &col)
            })
            .collect();
        let records = times
            .iter()
            .zip(events)
            .zip(rows)
            .map(|((&t, &e), f)| SurvivalRecord::new(t, e, f))
            .collect();
        Self::new(records, specs)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.specs.len()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.features[j]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.features.iter().any(Option::is_none))
    }

    /// Row-major dense copy of the features with `NaN` marking missing values.
    pub fn dense(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.features.iter().map(|v| v.unwrap_or(f64::NAN)))
            .collect()
    }

    /// Records at `indices` (repeats allowed), same schema.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new_degenerate(records, self.specs.clone())
    }

    /// Append a feature column.
    pub fn with_feature(&self, spec: FeatureSpec, values: &[Option<f64>]) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::Validation(format!(
                "new column has {} values for {} records",
                values.len(),
                self.n()
            )));
        }
        let mut specs = self.specs.clone();
        specs.push(spec);
        let records = self
            .records
            .iter()
            .zip(values)
            .map(|(r, v)| {
                let mut f = r.features.clone();
                f.push(*v);
                SurvivalRecord::new(r.time, r.event, f)
            })
            .collect();
        Self::new_degenerate(records, specs)
    }
}

/// Load a survival CSV. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, time_col: &str, event_col: &str) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, time_col, event_col)
}

/// Parse a header-first, comma-separated survival table. Every column other
/// than `time_col` and `event_col` becomes a feature in header order; empty
/// cells are missing; columns with any non-numeric cell become categorical.
pub fn read_csv<R: Read>(reader: R, time_col: &str, event_col: &str) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Validation(format!("column '{name}' not found in header"))
        })
    };
    let time_idx = find(time_col)?;
    let event_idx = find(event_col)?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != time_idx && c != event_idx)
        .collect();

    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("");

        let t_str = cell(time_idx);
        let t: f64 = t_str.parse().map_err(|_| Error::Parse {
            row,
            column: time_col.to_string(),
            message: if t_str.is_empty() {
                "missing time".into()
            } else {
                format!("'{t_str}' is not a number")
            },
        })?;
        if !t.is_finite() {
            return Err(Error::Parse {
                row,
                column: time_col.to_string(),
                message: format!("'{t_str}' is not finite"),
            });
        }
        if t <= 0.0 {
            return Err(Error::Validation(format!(
                "row {row}, column {time_col}: time must be positive, got {t}"
            )));
        }
        let e_str = cell(event_idx);
        let event = match e_str.parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => {
                return Err(Error::Validation(format!(
                    "row {row}, column {event_col}: event must be 0 or 1, got '{e_str}'"
                )))
            }
        };
        times.push(t);
        events.push(event);
        for (k, &c) in feature_cols.iter().enumerate() {
            raw[k].push(cell(c).to_string());
        }
    }

    let mut specs = Vec::with_capacity(feature_cols.len());
    let mut columns: Vec<Vec<Option<f64>>> = Vec::with_capacity(feature_cols.len());
    for (k, &c) in feature_cols.iter().enumerate() {
        let name = &headers[c];
        let cells = &raw[k];
        let numeric = cells
            .iter()
            .all(|s| s.is_empty() || s.parse::<f64>().is_ok());
        if numeric {
            let mut col = Vec::with_capacity(cells.len());
            for (i, s) in cells.iter().enumerate() {
                if s.is_empty() {
                    col.push(None);
                    continue;
                }
                let v: f64 = s.parse().map_err(|_| Error::Internal("unreachable".into()))?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: name.clone(),
                        message: format!("'{s}' is not finite"),
                    });
                }
                col.push(Some(v));
            }
            specs.push(FeatureSpec::infer(name.clone(), &col));
            columns.push(col);
        } else {
            let categories: Vec<String> = cells
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let col = cells
                .iter()
                .map(|s| {
                    if s.is_empty() {
                        None
                    } else {
                        categories.iter().position(|c| c == s).map(|i| i as f64)
                    }
                })
                .collect();
            specs.push(FeatureSpec::categorical(name.clone(), categories));
            columns.push(col);
        }
    }

    let records = (0..times.len())
        .map(|i| SurvivalRecord::new(times[i], events[i], columns.iter().map(|c| c[i]).collect()))
        .collect();
    SurvivalDataset::new_degenerate(records, specs)
}

/// Write the dataset in the CSV schema read by [`read_csv`]. Categorical
/// columns are written back as their labels.
pub fn write_csv<W: Write>(ds: &SurvivalDataset, writer: W, time_col: &str, event_col: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![time_col.to_string(), event_col.to_string()];
    header.extend(ds.feature_names());
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![format!("{}", r.time), if r.event { "1" } else { "0" }.to_string()];
        for (v, spec) in r.features.iter().zip(ds.specs()) {
            row.push(match (v, spec.kind) {
                (None, _) => String::new(),
                (Some(v), FeatureKind::Categorical) => spec.categories[*v as usize].clone(),
                (Some(v), _) => format!("{v}"),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Median as the midpoint of the central order statistics.
pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Most frequent of the non-negative integer codes in `values`; lowest code on ties.
fn mode(values: impl Iterator<Item = f64>, n_levels: usize) -> Option<f64> {
    let mut counts = vec![0usize; n_levels.max(1)];
    let mut seen = false;
    for v in values {
        counts[v as usize] += 1;
        seen = true;
    }
    if !seen {
        return None;
    }
    let best = counts
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bc), (i, &c)| if c > bc { (i, c) } else { (bi, bc) });
    Some(best.0 as f64)
}

/// Min-max rescale continuous features with their declared bounds, expand
/// categorical features into one-hot binary columns and optionally impute
/// missing values (median for continuous, mode for binary and categorical).
pub fn preprocess(ds: &SurvivalDataset, impute: bool) -> Result<SurvivalDataset> {
    let n = ds.n();
    let mut specs = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();

    for (j, spec) in ds.specs().iter().enumerate() {
        let col = ds.column(j);
        match spec.kind {
            FeatureKind::Continuous => {
                let (lo, hi) = (spec.observed_min, spec.observed_max);
                if !(hi > lo) {
                    return Err(Error::ConstantColumn(spec.name.clone()));
                }
                let width = hi - lo;
                let mut scaled: Vec<Option<f64>> =
                    col.iter().map(|v| v.map(|x| (x - lo) / width)).collect();
                if impute {
                    let mut observed: Vec<f64> = scaled.iter().flatten().copied().collect();
                    if let Some(m) = median(&mut observed) {
                        scaled.iter_mut().for_each(|v| *v = v.or(Some(m)));
                    }
                }
                specs.push(FeatureSpec::continuous(spec.name.clone(), 0.0, 1.0));
                columns.push(scaled);
            }
            FeatureKind::Binary => {
                let mut col = col;
                if impute {
                    if let Some(m) = mode(col.iter().flatten().copied(), 2) {
                        col.iter_mut().for_each(|v| *v = v.or(Some(m)));
                    }
                }
                specs.push(spec.clone());
                columns.push(col);
            }
            FeatureKind::Categorical => {
                let k = spec.categories.len();
                let mut col = col;
                if impute {
                    if let Some(m) = mode(col.iter().flatten().copied(), k) {
                        col.iter_mut().for_each(|v| *v = v.or(Some(m)));
                    }
                }
                for (c, label) in spec.categories.iter().enumerate() {
                    specs.push(FeatureSpec::binary(format!("{}={}", spec.name, label)));
                    columns.push(
                        col.iter()
                            .map(|v| v.map(|x| if x as usize == c { 1.0 } else { 0.0 }))
                            .collect(),
                    );
                }
            }
        }
    }

    let records = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| SurvivalRecord::new(r.time, r.event, columns.iter().map(|c| c[i]).collect()))
        .collect::<Vec<_>>();
    debug_assert_eq!(records.len(), n);
    SurvivalDataset::new_degenerate(records, specs)
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn bootstrap_resample(ds: &SurvivalDataset, seed: u64) -> Result<SurvivalDataset> {
    ds.subset(&bootstrap_indices(ds.n(), seed))
}
