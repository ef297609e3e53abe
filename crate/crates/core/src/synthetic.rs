//! Ground-truth data generation with a planted sparse support, plus a Monte
//! Carlo oracle for the average prediction error that the selection
//! statistic estimates.
//!
//! Records are generated per (surgeon, operation-type) pair: each pair is a
//! generation unit with its own intercept (global mean + surgeon effect +
//! type effect) and its own coefficients over the shared support.
//! Coefficients vary primarily between surgeons, with an optional extra
//! per-pair jitter.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, CovariateSchema, Dataset, SurgeryRecord};
use crate::error::{Error, Result};
use crate::ols::{fit_ols, DesignMatrix};
use crate::select::CandidateModel;
use crate::stats::derive_seed;

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Marginal law of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    TruncNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
    Categorical { values: Vec<f64>, probs: Vec<f64> },
    Indicator { p: f64 },
}

impl Marginal {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Marginal::Normal { sd, .. } | Marginal::TruncNormal { sd, .. } => {
                if *sd <= 0.0 {
                    return Err(Error::InvalidConfig(format!("{name}: sd must be positive")));
                }
            }
            Marginal::LogNormal { log_sd, .. } => {
                if *log_sd <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: log_sd must be positive"
                    )));
                }
            }
            Marginal::Categorical { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: values and probs must be nonempty and equal length"
                    )));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: probabilities sum to {total}, not 1"
                    )));
                }
                if probs.iter().any(|p| *p < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: negative probability"
                    )));
                }
            }
            Marginal::Indicator { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidConfig(format!("{name}: p out of [0, 1]")));
                }
            }
        }
        if let Marginal::TruncNormal { mean, sd, lo, hi } = self {
            if lo >= hi {
                return Err(Error::InvalidConfig(format!("{name}: empty truncation")));
            }
            let mass = norm_cdf((hi - mean) / sd) - norm_cdf((lo - mean) / sd);
            if mass < 1e-3 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: truncation keeps almost no mass"
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Marginal::Normal { mean, sd } => {
                Normal::new(*mean, *sd).unwrap().sample(rng)
            }
            Marginal::TruncNormal { mean, sd, lo, hi } => {
                let gauss = Normal::new(*mean, *sd).unwrap();
                loop {
                    let x = gauss.sample(rng);
                    if x >= *lo && x <= *hi {
                        return x;
                    }
                }
            }
            Marginal::LogNormal { log_mean, log_sd } => {
                Normal::new(*log_mean, *log_sd).unwrap().sample(rng).exp()
            }
            Marginal::Categorical { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
            Marginal::Indicator { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Normal { mean, .. } => *mean,
            Marginal::TruncNormal { mean, sd, lo, hi } => {
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                let z = norm_cdf(b) - norm_cdf(a);
                mean + sd * (norm_pdf(a) - norm_pdf(b)) / z
            }
            Marginal::LogNormal { log_mean, log_sd } => {
                (log_mean + 0.5 * log_sd * log_sd).exp()
            }
            Marginal::Categorical { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
            Marginal::Indicator { p } => *p,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Marginal::Normal { sd, .. } => sd * sd,
            Marginal::TruncNormal { mean, sd, lo, hi } => {
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                let z = norm_cdf(b) - norm_cdf(a);
                let ratio = (norm_pdf(a) - norm_pdf(b)) / z;
                sd * sd * (1.0 + (a * norm_pdf(a) - b * norm_pdf(b)) / z - ratio * ratio)
            }
            Marginal::LogNormal { log_mean, log_sd } => {
                let s2 = log_sd * log_sd;
                (s2.exp() - 1.0) * (2.0 * log_mean + s2).exp()
            }
            Marginal::Categorical { values, probs } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m) * (v - m)).sum()
            }
            Marginal::Indicator { p } => p * (1.0 - p),
        }
    }
}

/// How many observations a generated task gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TaskSizeLaw {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    /// Truncated geometric on [min, max]; small tasks dominate.
    Geometric { p: f64, min: usize, max: usize },
}

impl TaskSizeLaw {
    fn validate(&self) -> Result<()> {
        match self {
            TaskSizeLaw::Fixed { n } if *n == 0 => {
                Err(Error::InvalidConfig("task size must be positive".into()))
            }
            TaskSizeLaw::Uniform { min, max } | TaskSizeLaw::Geometric { min, max, .. }
                if *min == 0 || min > max =>
            {
                Err(Error::InvalidConfig("bad task-size range".into()))
            }
            TaskSizeLaw::Geometric { p, .. } if !(0.0 < *p && *p < 1.0) => {
                Err(Error::InvalidConfig("geometric p must be in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            TaskSizeLaw::Fixed { n } => *n,
            TaskSizeLaw::Uniform { min, max } => rng.random_range(*min..=*max),
            TaskSizeLaw::Geometric { p, min, max } => {
                let span = (max - min + 1) as f64;
                let q = 1.0 - p;
                let total = 1.0 - q.powf(span);
                let u: f64 = rng.random();
                let k = ((1.0 - u * total).ln() / q.ln()).floor() as usize;
                min + k.min(max - min)
            }
        }
    }
}

/// One generated covariate: its schema kind and its marginal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    pub marginal: Marginal,
}

/// Full description of the generative process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_surgeons: usize,
    pub n_operation_types: usize,
    pub types_per_surgeon_min: usize,
    pub types_per_surgeon_max: usize,
    pub task_size: TaskSizeLaw,
    /// Covariates with a true effect.
    pub support: Vec<String>,
    /// Mean coefficient per support covariate.
    pub coef_mean: Vec<f64>,
    /// Between-surgeon coefficient standard deviation per support covariate.
    pub coef_sd: Vec<f64>,
    /// Extra relative per-pair coefficient jitter.
    pub task_coef_jitter: f64,
    /// Noise standard deviation on the log-duration scale.
    pub noise_sd: f64,
    pub global_mean: f64,
    pub surgeon_effect_sd: f64,
    pub type_effect_sd: f64,
    pub covariates: Vec<CovariateSpec>,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_surgeons == 0 || self.n_operation_types == 0 {
            return Err(Error::InvalidConfig(
                "need at least one surgeon and one operation type".into(),
            ));
        }
        if self.types_per_surgeon_min == 0
            || self.types_per_surgeon_min > self.types_per_surgeon_max
            || self.types_per_surgeon_max > self.n_operation_types
        {
            return Err(Error::InvalidConfig("bad types-per-surgeon range".into()));
        }
        self.task_size.validate()?;
        if self.support.is_empty() {
            return Err(Error::InvalidConfig("support must be nonempty".into()));
        }
        if self.support.len() != self.coef_mean.len() || self.support.len() != self.coef_sd.len() {
            return Err(Error::InvalidConfig(
                "support, coef_mean and coef_sd must align".into(),
            ));
        }
        for name in &self.support {
            if !self.covariates.iter().any(|c| &c.name == name) {
                return Err(Error::InvalidConfig(format!(
                    "support covariate `{name}` is not generated"
                )));
            }
        }
        if self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig("noise_sd must be nonnegative".into()));
        }
        if self.surgeon_effect_sd < 0.0 || self.type_effect_sd < 0.0 {
            return Err(Error::InvalidConfig("effect sds must be nonnegative".into()));
        }
        if self.date_start > self.date_end {
            return Err(Error::InvalidConfig("empty date range".into()));
        }
        for spec in &self.covariates {
            spec.marginal.validate(&spec.name)?;
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<CovariateSchema> {
        CovariateSchema::new(
            self.covariates
                .iter()
                .map(|c| (c.name.clone(), c.kind))
                .collect(),
        )
    }

    /// Marginals mirroring the reference cohort: truncated-normal age, a
    /// five-level anesthesiologist count, three diagnosis indicators with
    /// their observed frequencies, and log-normal surgeon experience.
    pub fn reference() -> Self {
        let n = 13359.0;
        GeneratorConfig {
            seed: 20090512,
            n_surgeons: 32,
            n_operation_types: 20,
            types_per_surgeon_min: 2,
            types_per_surgeon_max: 6,
            task_size: TaskSizeLaw::Geometric {
                p: 0.01,
                min: 15,
                max: 1052,
            },
            support: vec![
                "age".into(),
                "n_anesthesiologists".into(),
                "surgeon_experience".into(),
            ],
            coef_mean: vec![0.004, 0.12, 5.0e-5],
            coef_sd: vec![0.001, 0.03, 1.5e-5],
            task_coef_jitter: 0.0,
            noise_sd: 0.3,
            global_mean: 4.0,
            surgeon_effect_sd: 0.2,
            type_effect_sd: 0.4,
            covariates: vec![
                CovariateSpec {
                    name: "age".into(),
                    kind: CovariateKind::Continuous,
                    marginal: Marginal::TruncNormal {
                        mean: 53.0,
                        sd: 21.5,
                        lo: 0.0,
                        hi: 100.0,
                    },
                },
                CovariateSpec {
                    name: "n_anesthesiologists".into(),
                    kind: CovariateKind::Count,
                    marginal: Marginal::Categorical {
                        values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
                        probs: vec![5112.0 / n, 5679.0 / n, 2455.0 / n, 110.0 / n, 3.0 / n],
                    },
                },
                CovariateSpec {
                    name: "hypertension".into(),
                    kind: CovariateKind::Indicator,
                    marginal: Marginal::Indicator { p: 3908.0 / n },
                },
                CovariateSpec {
                    name: "ot_compl_bir".into(),
                    kind: CovariateKind::Indicator,
                    marginal: Marginal::Indicator { p: 994.0 / n },
                },
                CovariateSpec {
                    name: "diabetes_mellitus".into(),
                    kind: CovariateKind::Indicator,
                    marginal: Marginal::Indicator { p: 1762.0 / n },
                },
                CovariateSpec {
                    name: "surgeon_experience".into(),
                    kind: CovariateKind::Count,
                    marginal: Marginal::LogNormal {
                        log_mean: 437.0f64.ln(),
                        log_sd: 1.05,
                    },
                },
            ],
            date_start: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2017, 12, 31).unwrap(),
        }
    }

    /// Small six-covariate configuration with a planted three-covariate
    /// support; fast enough for unit tests.
    pub fn small_planted() -> Self {
        let covariates = (1..=6)
            .map(|i| CovariateSpec {
                name: format!("x{i}"),
                kind: CovariateKind::Continuous,
                marginal: Marginal::Normal { mean: 0.0, sd: 1.0 },
            })
            .collect();
        GeneratorConfig {
            seed: 20090512,
            n_surgeons: 8,
            n_operation_types: 4,
            types_per_surgeon_min: 1,
            types_per_surgeon_max: 2,
            task_size: TaskSizeLaw::Uniform { min: 40, max: 120 },
            support: vec!["x1".into(), "x2".into(), "x3".into()],
            coef_mean: vec![0.3, 0.2, 0.12],
            coef_sd: vec![0.05, 0.05, 0.03],
            task_coef_jitter: 0.0,
            noise_sd: 0.3,
            global_mean: 4.2,
            surgeon_effect_sd: 0.2,
            type_effect_sd: 0.3,
            covariates,
            date_start: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2016, 12, 31).unwrap(),
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: GeneratorConfig =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_file(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// The generating law of one (surgeon, operation-type) task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTruth {
    pub surgeon_id: String,
    pub operation_type_id: String,
    /// Global mean + surgeon effect + type effect.
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

/// Everything needed to sample fresh data from the same process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub noise_sd: f64,
    pub support: Vec<String>,
    pub covariates: Vec<CovariateSpec>,
    pub type_effects: BTreeMap<String, f64>,
    /// Population mean log duration per type (average surgeon, mean
    /// coefficients, mean covariates).
    pub type_means: BTreeMap<String, f64>,
    pub tasks: Vec<TaskTruth>,
}

impl GroundTruth {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn schema(&self) -> Result<CovariateSchema> {
        CovariateSchema::new(
            self.covariates
                .iter()
                .map(|c| (c.name.clone(), c.kind))
                .collect(),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_task_records(
    truth_task: &TaskTruth,
    covariates: &[CovariateSpec],
    noise_sd: f64,
    n: usize,
    id_prefix: &str,
    counter: &mut usize,
    date_start: NaiveDate,
    date_span_days: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<SurgeryRecord> {
    let gauss = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let values: Vec<f64> = covariates.iter().map(|c| c.marginal.sample(rng)).collect();
            let signal: f64 = covariates
                .iter()
                .zip(&values)
                .filter_map(|(c, v)| truth_task.coefficients.get(&c.name).map(|b| b * v))
                .sum();
            let log_duration =
                truth_task.intercept + signal + noise_sd * gauss.sample(rng);
            let offset = rng.random_range(0..=date_span_days);
            let rec = SurgeryRecord {
                record_id: format!("{id_prefix}{:06}", *counter),
                surgeon_id: truth_task.surgeon_id.clone(),
                operation_type_id: truth_task.operation_type_id.clone(),
                duration_minutes: log_duration.exp(),
                log_duration,
                date: date_start + chrono::Duration::days(offset),
                covariates: values,
            };
            *counter += 1;
            rec
        })
        .collect()
}

/// Draws the task structure and one dataset from it. Bit-reproducible for a
/// fixed config.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gauss = Normal::new(0.0, 1.0).unwrap();

    let type_ids: Vec<String> = (0..config.n_operation_types)
        .map(|t| format!("OT{t:03}"))
        .collect();
    let type_effects: BTreeMap<String, f64> = type_ids
        .iter()
        .map(|t| (t.clone(), config.type_effect_sd * gauss.sample(&mut rng)))
        .collect();

    let mean_covariate_signal: f64 = config
        .support
        .iter()
        .zip(&config.coef_mean)
        .map(|(name, b)| {
            let marginal = &config
                .covariates
                .iter()
                .find(|c| &c.name == name)
                .unwrap()
                .marginal;
            b * marginal.mean()
        })
        .sum();
    let type_means: BTreeMap<String, f64> = type_effects
        .iter()
        .map(|(t, g)| (t.clone(), config.global_mean + g + mean_covariate_signal))
        .collect();

    let mut tasks = Vec::new();
    let mut sizes = Vec::new();
    for s in 0..config.n_surgeons {
        let surgeon_id = format!("S{s:03}");
        let surgeon_effect = config.surgeon_effect_sd * gauss.sample(&mut rng);
        let surgeon_coefs: Vec<f64> = config
            .coef_mean
            .iter()
            .zip(&config.coef_sd)
            .map(|(m, sd)| m + sd * gauss.sample(&mut rng))
            .collect();
        let k = rng.random_range(config.types_per_surgeon_min..=config.types_per_surgeon_max);
        let chosen = rand::seq::index::sample(&mut rng, config.n_operation_types, k);
        let mut chosen: Vec<usize> = chosen.into_iter().collect();
        chosen.sort();
        for t in chosen {
            let operation_type_id = type_ids[t].clone();
            let coefficients: BTreeMap<String, f64> = config
                .support
                .iter()
                .zip(&surgeon_coefs)
                .zip(&config.coef_mean)
                .map(|((name, sc), m)| {
                    let jitter = m * config.task_coef_jitter * gauss.sample(&mut rng);
                    (name.clone(), sc + jitter)
                })
                .collect();
            tasks.push(TaskTruth {
                surgeon_id: surgeon_id.clone(),
                operation_type_id: operation_type_id.clone(),
                intercept: config.global_mean + surgeon_effect + type_effects[&operation_type_id],
                coefficients,
            });
            sizes.push(config.task_size.sample(&mut rng));
        }
    }

    let date_span_days = (config.date_end - config.date_start).num_days();
    let mut counter = 0usize;
    let mut records = Vec::new();
    for (task, n) in tasks.iter().zip(&sizes) {
        records.extend(sample_task_records(
            task,
            &config.covariates,
            config.noise_sd,
            *n,
            "R",
            &mut counter,
            config.date_start,
            date_span_days,
            &mut rng,
        ));
    }

    let truth = GroundTruth {
        seed: config.seed,
        noise_sd: config.noise_sd,
        support: config.support.clone(),
        covariates: config.covariates.clone(),
        type_effects,
        type_means,
        tasks,
    };
    Ok((Dataset::new(schema, records)?, truth))
}

/// Samples a fresh dataset (for example a test split) from an existing
/// ground truth: `n_per_task` new records for every task.
pub fn sample_from_truth(
    truth: &GroundTruth,
    n_per_task: usize,
    seed: u64,
    date_start: NaiveDate,
    date_end: NaiveDate,
) -> Result<Dataset> {
    if n_per_task == 0 {
        return Err(Error::InvalidArgument("n_per_task must be positive".into()));
    }
    if date_start > date_end {
        return Err(Error::InvalidArgument("empty date range".into()));
    }
    let schema = truth.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (date_end - date_start).num_days();
    let mut counter = 0usize;
    let mut records = Vec::new();
    for task in &truth.tasks {
        records.extend(sample_task_records(
            task,
            &truth.covariates,
            truth.noise_sd,
            n_per_task,
            "E",
            &mut counter,
            date_start,
            span,
            &mut rng,
        ));
    }
    Dataset::new(schema, records)
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Brute-force estimate of the average prediction error of `model` when
/// every task is refit on `n` fresh observations: per replication and task,
/// draw a size-`n` training sample from the true task law, fit, and score a
/// single fresh test point. Replications run in parallel with derived
/// seeds; the estimate is independent of scheduling.
pub fn oracle_risk(
    truth: &GroundTruth,
    model: &CandidateModel,
    n: usize,
    mc_reps: usize,
) -> Result<OracleEstimate> {
    if mc_reps < 1000 {
        return Err(Error::InvalidArgument(
            "oracle needs at least 1000 replications".into(),
        ));
    }
    let d = 1 + model.subset.len();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "n = {n} too small for model dimension {d}"
        )));
    }
    for name in &model.subset {
        if !truth.covariates.iter().any(|c| &c.name == name) {
            return Err(Error::UnknownCovariate(name.clone()));
        }
    }

    // Covariates needed per record: the model's columns plus the support.
    let needed: Vec<&CovariateSpec> = truth
        .covariates
        .iter()
        .filter(|c| model.subset.contains(&c.name) || truth.support.contains(&c.name))
        .collect();
    let col_names: Vec<String> = {
        let mut names = vec!["intercept".to_string()];
        names.extend(model.subset.iter().cloned());
        names
    };

    let per_rep: Vec<f64> = (0..mc_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(truth.seed, 0x0AC1_0000 + rep as u64));
            let gauss = Normal::new(0.0, 1.0).unwrap();
            let mut task_total = 0.0;
            for task in &truth.tasks {
                // Fresh training sample of size n.
                let mut values = Array2::zeros((n, d));
                let mut y = Vec::with_capacity(n);
                for i in 0..n {
                    values[[i, 0]] = 1.0;
                    let mut signal = 0.0;
                    for spec in &needed {
                        let v = spec.marginal.sample(&mut rng);
                        if let Some(b) = task.coefficients.get(&spec.name) {
                            signal += b * v;
                        }
                        if let Some(j) = model.subset.iter().position(|s| s == &spec.name) {
                            values[[i, j + 1]] = v;
                        }
                    }
                    y.push(task.intercept + signal + truth.noise_sd * gauss.sample(&mut rng));
                }
                let design =
                    DesignMatrix::new(values, col_names.clone(), true).expect("oracle design");
                let fit = fit_ols(&design, &y).expect("oracle fit");

                // One fresh test point.
                let mut row = vec![0.0; d];
                row[0] = 1.0;
                let mut signal = 0.0;
                for spec in &needed {
                    let v = spec.marginal.sample(&mut rng);
                    if let Some(b) = task.coefficients.get(&spec.name) {
                        signal += b * v;
                    }
                    if let Some(j) = model.subset.iter().position(|s| s == &spec.name) {
                        row[j + 1] = v;
                    }
                }
                let y_star = task.intercept + signal + truth.noise_sd * gauss.sample(&mut rng);
                let pred: f64 = row.iter().zip(&fit.coefficients).map(|(x, b)| x * b).sum();
                let err = y_star - pred;
                task_total += err * err;
            }
            task_total / truth.tasks.len() as f64
        })
        .collect();

    let estimate = per_rep.iter().sum::<f64>() / mc_reps as f64;
    let var = per_rep
        .iter()
        .map(|a| (a - estimate) * (a - estimate))
        .sum::<f64>()
        / (mc_reps - 1) as f64;
    Ok(OracleEstimate {
        estimate,
        standard_error: (var / mc_reps as f64).sqrt(),
    })
}
