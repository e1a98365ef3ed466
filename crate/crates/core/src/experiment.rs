//! Config files and multi-run policy comparisons.
//!
//! A simulation config is a TOML document with the sections of
//! [`SimConfig`]. An experiment file adds `repetitions`, `base_seed` and
//! `output_dir`, a `[base]` config, and one `[[runs]]` table per label
//! whose keys are merged over the base:
//!
//! ```toml
//! repetitions = 3
//! base_seed = 7
//!
//! [base.workload]
//! profile = "hi"
//!
//! [[runs]]
//! label = "greedy"
//! policy = { name = "dispersiongreedy" }
//!
//! [[runs]]
//! label = "random"
//! policy = { name = "random" }
//! ```
//!
//! Repetition `r` of every label runs with seed `derive_seed(base_seed, r)`,
//! so labels are compared on the same workloads.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{self, derive_seed, AggregateQos, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("run `{label}` (seed {seed}) failed: {source}")]
    RunFailed {
        label: String,
        seed: u64,
        source: SimError,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, ExperimentError> {
    toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sim_config(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledConfig {
    pub label: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub runs: Vec<LabeledConfig>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let parse_err = |e: String| ExperimentError::Parse(e);
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let repetitions = match doc.remove("repetitions") {
            None => 1,
            Some(toml::Value::Integer(n)) if n >= 1 => n as usize,
            Some(_) => return Err(ExperimentError::Invalid("repetitions: must be an integer >= 1".into())),
        };
        let base_seed = match doc.remove("base_seed") {
            None => 0,
            Some(toml::Value::Integer(n)) if n >= 0 => n as u64,
            Some(_) => return Err(ExperimentError::Invalid("base_seed: must be a non-negative integer".into())),
        };
        let output_dir = match doc.remove("output_dir") {
            None => None,
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(ExperimentError::Invalid("output_dir: must be a string".into())),
        };
        let base = match doc.remove("base") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(ExperimentError::Invalid("base: must be a table".into())),
        };
        let runs = match doc.remove("runs") {
            None => Vec::new(),
            Some(toml::Value::Array(a)) => a,
            Some(_) => return Err(ExperimentError::Invalid("runs: must be an array of tables".into())),
        };
        if let Some(k) = doc.keys().next() {
            return Err(ExperimentError::Invalid(format!("unknown key `{k}`")));
        }
        if runs.is_empty() {
            return Err(ExperimentError::Invalid("no [[runs]] defined".into()));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(runs.len());
        for (i, r) in runs.into_iter().enumerate() {
            let toml::Value::Table(mut t) = r else {
                return Err(ExperimentError::Invalid(format!("runs[{i}]: must be a table")));
            };
            let label = match t.remove("label") {
                Some(toml::Value::String(s)) if !s.is_empty() => s,
                _ => return Err(ExperimentError::Invalid(format!("runs[{i}].label: missing"))),
            };
            if !seen.insert(label.clone()) {
                return Err(ExperimentError::Invalid(format!("runs[{i}].label: duplicate `{label}`")));
            }
            let mut merged = base.clone();
            deep_merge(&mut merged, t);
            let config: SimConfig = toml::Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| parse_err(format!("run `{label}`: {e}")))?;
            config
                .validate()
                .map_err(|e| ExperimentError::Invalid(format!("run `{label}`: {e}")))?;
            out.push(LabeledConfig { label, config });
        }
        Ok(Self {
            runs: out,
            repetitions,
            base_seed,
            output_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn seed_for(&self, repetition: usize) -> u64 {
        derive_seed(self.base_seed, repetition as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub repetition: usize,
    pub seed: u64,
    pub aggregate: AggregateQos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub field: String,
    /// Runs in which the field was defined.
    pub count: usize,
    pub mean: Option<f64>,
    pub stdev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub runs: usize,
    pub fields: Vec<FieldSummary>,
}

impl ComparisonRow {
    pub fn field(&self, name: &str) -> Option<&FieldSummary> {
        self.fields.iter().find(|f| f.field == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub repetitions: usize,
    pub base_seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<RunResult>,
}

fn summarize(field: &str, values: &[f64]) -> FieldSummary {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let stdev = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    });
    FieldSummary {
        field: field.to_string(),
        count: n,
        mean,
        stdev,
    }
}

/// Runs every label for every repetition on a pool of `workers` threads
/// (all available processors when `None`).
pub fn compare(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Comparison, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let jobs: Vec<(usize, usize, u64)> = (0..spec.runs.len())
        .flat_map(|i| (0..spec.repetitions).map(move |r| (i, r, 0)))
        .map(|(i, r, _)| (i, r, spec.seed_for(r)))
        .collect();
    let results: Vec<Result<RunResult, ExperimentError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, r, seed)| {
                let labeled = &spec.runs[i];
                let mut cfg = labeled.config.clone();
                cfg.run.seed = seed;
                let report = sim::run(&cfg).map_err(|source| ExperimentError::RunFailed {
                    label: labeled.label.clone(),
                    seed,
                    source,
                })?;
                Ok(RunResult {
                    label: labeled.label.clone(),
                    repetition: r,
                    seed,
                    aggregate: report.aggregate,
                })
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rows = spec
        .runs
        .iter()
        .map(|l| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.label == l.label).collect();
            let names: Vec<&'static str> = mine
                .first()
                .map(|r| r.aggregate.fields().into_iter().map(|(n, _)| n).collect())
                .unwrap_or_default();
            let fields = names
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let values: Vec<f64> = mine.iter().filter_map(|r| r.aggregate.fields()[k].1).collect();
                    summarize(name, &values)
                })
                .collect();
            ComparisonRow {
                label: l.label.clone(),
                runs: mine.len(),
                fields,
            }
        })
        .collect();
    Ok(Comparison {
        repetitions: spec.repetitions,
        base_seed: spec.base_seed,
        rows,
        runs,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,runs");
        if let Some(first) = self.rows.first() {
            for f in &first.fields {
                let _ = write!(out, ",{0}_mean,{0}_stdev", f.field);
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.label, row.runs);
            for f in &row.fields {
                let _ = write!(out, ",{},{}", cell(f.mean), cell(f.stdev));
            }
            out.push('\n');
        }
        out
    }
}
