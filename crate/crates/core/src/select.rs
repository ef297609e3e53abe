//! Sample-size-indexed covariate selection for multi-task regression.
//!
//! Every task keeps its own coefficients while all tasks with the same
//! sample size share one covariate subset. The subset chosen for sample size
//! `n` minimizes an average-prediction-error statistic over the tasks,
//!
//! ```text
//! C(n) = (1/J) * sum_j [ RSS_j(p)/n_j + s2_j * d_p(j)/n_j + s2_j * d_p(j)/n ]
//! ```
//!
//! where `s2_j` is the residual variance of the largest admissible model on
//! task `j` and `d_p(j)` counts the intercept, the subset columns, and any
//! within-task indicator columns. For a single task evaluated at its own
//! sample size this reduces exactly to Mallows's Cp:
//! `n * C(n) = RSS + 2 * d * s2`. Sweeping `n` over a grid and compressing
//! equal winners yields a step-function selection rule.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_global, GlobalModel};
use crate::data::{
    CategoricalField, CovariateSchema, Dataset, Encoder, SurgeryRecord, TaskKey, TaskMode,
    TaskPartition, TypeCentering,
};
use crate::error::{Error, Result};
use crate::ols::fit_ols;

/// Within-task operation-type dummies require strictly more than 10 task
/// observations of the level, i.e. a count of at least 11.
pub const WITHIN_TASK_DUMMY_MIN: usize = 11;

/// Largest covariate pool for which the exhaustive candidate universe
/// (all subsets) is still generated.
pub const MAX_EXHAUSTIVE_POOL: usize = 12;

/// Degrees-of-freedom margin demanded when the full model has to be shrunk
/// to fit a small task.
const SIGMA2_SHRINK_MARGIN: usize = 5;

/// A covariate subset under consideration, plus whether task designs carry
/// the within-task operation-type indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateModel {
    /// Sorted, deduplicated covariate names.
    pub subset: Vec<String>,
    pub within_task_categorical: bool,
}

impl CandidateModel {
    pub fn new(mut subset: Vec<String>, within_task_categorical: bool) -> Self {
        subset.sort();
        subset.dedup();
        CandidateModel {
            subset,
            within_task_categorical,
        }
    }

    /// Model dimension in task `j`: intercept + subset + task dummies.
    pub fn dimension_for(&self, task_dummy_count: usize) -> usize {
        1 + self.subset.len()
            + if self.within_task_categorical {
                task_dummy_count
            } else {
                0
            }
    }
}

/// All `2^k` subsets of the pool. Errors beyond [`MAX_EXHAUSTIVE_POOL`].
pub fn candidate_universe(
    pool: &[String],
    within_task_categorical: bool,
) -> Result<Vec<CandidateModel>> {
    if pool.len() > MAX_EXHAUSTIVE_POOL {
        return Err(Error::InvalidArgument(format!(
            "pool of {} covariates exceeds the exhaustive-search limit of {}",
            pool.len(),
            MAX_EXHAUSTIVE_POOL
        )));
    }
    let mut out = Vec::with_capacity(1 << pool.len());
    for mask in 0u32..(1 << pool.len()) {
        let subset: Vec<String> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, name)| name.clone())
            .collect();
        out.push(CandidateModel::new(subset, within_task_categorical));
    }
    Ok(out)
}

/// Residual variance of the largest admissible model on one task.
#[derive(Debug, Clone)]
pub struct Sigma2Full {
    pub value: f64,
    /// Nominal dimension of the model that produced the estimate.
    pub dimension: usize,
    /// Pool actually used after any shrinking.
    pub pool_used: Vec<String>,
}

/// Fits the largest admissible model on a task and returns
/// `RSS / (n - rank)`. When the full pool does not leave `n > d`, the
/// last-ranked covariates are dropped until `n > d + 5`; running out of pool
/// without reaching that margin is an error.
pub fn sigma2_full(
    dataset: &Dataset,
    task: &TaskKey,
    indices: &[usize],
    response: &[f64],
    pool: &[String],
    within_task: Option<(CategoricalField, usize)>,
) -> Result<Sigma2Full> {
    let n = indices.len();
    let dummy_count = match within_task {
        Some((field, min_count)) => {
            Encoder::fit(dataset, indices, &[], &[(field, min_count)], true)?
                .dimension()
                - 1
        }
        None => 0,
    };

    let mut used = pool.to_vec();
    if n <= 1 + used.len() + dummy_count {
        while n <= 1 + used.len() + dummy_count + SIGMA2_SHRINK_MARGIN {
            if used.pop().is_none() {
                break;
            }
        }
        if used.is_empty() && n <= 1 + dummy_count + SIGMA2_SHRINK_MARGIN {
            return Err(Error::TaskTooSmall {
                task: task.to_string(),
                message: format!(
                    "n = {n} cannot support even the intercept-only model with a {SIGMA2_SHRINK_MARGIN}-df margin"
                ),
            });
        }
    }

    let cats: Vec<(CategoricalField, usize)> = within_task.into_iter().collect();
    let encoder = Encoder::fit(dataset, indices, &used, &cats, true)?;
    let design = encoder.encode(dataset, indices)?;
    let fit = fit_ols(&design, response)?;
    if n <= fit.effective_rank {
        return Err(Error::TaskTooSmall {
            task: task.to_string(),
            message: format!("no residual degrees of freedom (n = {n}, rank = {})", fit.effective_rank),
        });
    }
    Ok(Sigma2Full {
        value: fit.rss / (n - fit.effective_rank) as f64,
        dimension: encoder.dimension(),
        pool_used: used,
    })
}

/// Per-task ingredients prepared once per (dataset, partition, pool).
#[derive(Debug, Clone)]
pub struct TaskContext {
    pub key: TaskKey,
    pub indices: Vec<usize>,
    pub n: usize,
    /// Response on the model scale: centered log duration in surgeon mode,
    /// raw log duration otherwise.
    pub response: Vec<f64>,
    /// Residual variance of the largest admissible model.
    pub sigma2: f64,
    /// Within-task dummy columns this task's designs carry when the
    /// candidate's categorical flag is on.
    pub dummy_count: usize,
}

/// Everything the selection statistic needs about a training partition.
pub struct SelectionContext<'a> {
    pub dataset: &'a Dataset,
    pub mode: TaskMode,
    /// Filtered covariate pool, best first; shrinking drops from the end.
    pub pool: Vec<String>,
    pub centering: Option<TypeCentering>,
    pub tasks: Vec<TaskContext>,
}

impl<'a> SelectionContext<'a> {
    pub fn build(
        dataset: &'a Dataset,
        partition: &TaskPartition,
        pool: Vec<String>,
    ) -> Result<Self> {
        let mode = partition.mode;
        let centering = match mode {
            TaskMode::Surgeon => Some(TypeCentering::fit(dataset)?),
            _ => None,
        };
        let within = within_task_spec(mode);

        let mut tasks = Vec::with_capacity(partition.len());
        for (key, indices) in &partition.tasks {
            let response: Vec<f64> = indices
                .iter()
                .map(|&i| {
                    let rec = &dataset.records()[i];
                    match &centering {
                        Some(c) => c.adjusted(rec),
                        None => rec.log_duration,
                    }
                })
                .collect();
            let dummy_count = match within {
                Some((field, min_count)) => {
                    Encoder::fit(dataset, indices, &[], &[(field, min_count)], true)?.dimension()
                        - 1
                }
                None => 0,
            };
            let sigma2 = sigma2_full(dataset, key, indices, &response, &pool, within)?;
            tasks.push(TaskContext {
                key: key.clone(),
                indices: indices.clone(),
                n: indices.len(),
                response,
                sigma2: sigma2.value,
                dummy_count,
            });
        }
        Ok(SelectionContext {
            dataset,
            mode,
            pool,
            centering,
            tasks,
        })
    }

    pub fn min_task_size(&self) -> usize {
        self.tasks.iter().map(|t| t.n).min().unwrap_or(0)
    }

    pub fn max_task_size(&self) -> usize {
        self.tasks.iter().map(|t| t.n).max().unwrap_or(0)
    }

    /// Encodes one task's design for a candidate model.
    pub fn task_design(
        &self,
        task: &TaskContext,
        model: &CandidateModel,
    ) -> Result<(crate::ols::DesignMatrix, Encoder)> {
        let cats: Vec<(CategoricalField, usize)> = if model.within_task_categorical {
            within_task_spec(self.mode).into_iter().collect()
        } else {
            Vec::new()
        };
        let encoder = Encoder::fit(self.dataset, &task.indices, &model.subset, &cats, true)?;
        let design = encoder.encode(self.dataset, &task.indices)?;
        Ok((design, encoder))
    }
}

/// Surgeon-mode tasks carry operation-type indicators for types with more
/// than 10 task observations; the other modes have single-type or
/// single-surgeon structure absorbed by the intercept.
pub fn within_task_spec(mode: TaskMode) -> Option<(CategoricalField, usize)> {
    match mode {
        TaskMode::Surgeon => Some((CategoricalField::OperationType, WITHIN_TASK_DUMMY_MIN)),
        TaskMode::OperationType | TaskMode::Interaction => None,
    }
}

/// Whether candidates in this mode carry the within-task categorical.
pub fn mode_uses_within_task_categorical(mode: TaskMode) -> bool {
    within_task_spec(mode).is_some()
}

/// The statistic evaluated for one candidate at one sample size.
#[derive(Debug, Clone)]
pub struct CpEstimate {
    pub model: CandidateModel,
    pub n: usize,
    pub value: f64,
    pub per_task: Vec<(TaskKey, f64)>,
}

/// The `n`-free pieces of the statistic: per task,
/// `a = RSS/n_j + s2*d/n_j` and `b = s2*d`, so the value at `n` is the task
/// mean of `a + b/n`.
fn cp_components(ctx: &SelectionContext, model: &CandidateModel) -> Result<Vec<(f64, f64)>> {
    let mut parts = Vec::with_capacity(ctx.tasks.len());
    for task in &ctx.tasks {
        let d = model.dimension_for(task.dummy_count);
        if task.n <= d {
            return Err(Error::CpPrecondition {
                task: task.key.to_string(),
                n: task.n,
                dimension: d,
            });
        }
        let (design, _) = ctx.task_design(task, model)?;
        let fit = fit_ols(&design, &task.response)?;
        let nj = task.n as f64;
        let df = d as f64;
        let a = fit.rss / nj + task.sigma2 * df / nj;
        let b = task.sigma2 * df;
        parts.push((a, b));
    }
    Ok(parts)
}

fn cp_value_at(parts: &[(f64, f64)], n: usize) -> f64 {
    let total: f64 = parts.iter().map(|(a, b)| a + b / n as f64).sum();
    total / parts.len() as f64
}

/// Estimates the average prediction error of `model` if every task were fit
/// on `n` fresh observations.
pub fn cp_statistic(ctx: &SelectionContext, model: &CandidateModel, n: usize) -> Result<CpEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let parts = cp_components(ctx, model)?;
    let per_task: Vec<(TaskKey, f64)> = ctx
        .tasks
        .iter()
        .zip(&parts)
        .map(|(t, (a, b))| (t.key.clone(), a + b / n as f64))
        .collect();
    Ok(CpEstimate {
        model: model.clone(),
        n,
        value: cp_value_at(&parts, n),
        per_task,
    })
}

fn better(candidate: &(f64, &CandidateModel), incumbent: &(f64, &CandidateModel)) -> bool {
    match candidate.0.total_cmp(&incumbent.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            match candidate.1.subset.len().cmp(&incumbent.1.subset.len()) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => candidate.1.subset < incumbent.1.subset,
            }
        }
    }
}

/// Exhaustively evaluates the candidates at sample size `n` and returns the
/// arg-min; ties go to the smaller subset, then to the lexicographically
/// smaller one. Candidates violating a precondition are skipped with a
/// warning.
pub fn best_subset_for_n(
    ctx: &SelectionContext,
    candidates: &[CandidateModel],
    n: usize,
) -> Result<CandidateModel> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut best: Option<(f64, &CandidateModel)> = None;
    for model in candidates {
        match cp_statistic(ctx, model, n) {
            Ok(estimate) => {
                let entry = (estimate.value, model);
                if best.is_none() || better(&entry, best.as_ref().unwrap()) {
                    best = Some(entry);
                }
            }
            Err(err) => {
                log::warn!("skipping candidate {:?}: {err}", model.subset);
            }
        }
    }
    best.map(|(_, m)| m.clone()).ok_or(Error::NoCandidates)
}

/// One constant piece of a selection rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRange {
    pub n_low: usize,
    pub n_high: usize,
    pub subset: Vec<String>,
}

/// Step function from task sample size to covariate subset: contiguous,
/// disjoint, sorted ranges covering the swept grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub mode: TaskMode,
    pub pool: Vec<String>,
    pub within_task_categorical: bool,
    pub ranges: Vec<RuleRange>,
}

impl SelectionRule {
    pub fn model_for(&self, n: usize) -> Option<CandidateModel> {
        self.ranges
            .iter()
            .find(|r| r.n_low <= n && n <= r.n_high)
            .map(|r| CandidateModel::new(r.subset.clone(), self.within_task_categorical))
    }

    pub fn n_min(&self) -> Option<usize> {
        self.ranges.first().map(|r| r.n_low)
    }

    pub fn n_max(&self) -> Option<usize> {
        self.ranges.last().map(|r| r.n_high)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Evaluates the best subset at every integer `n` in the grid and compresses
/// consecutive equal winners into ranges. No nestedness is imposed.
pub fn build_selection_rule(
    ctx: &SelectionContext,
    candidates: &[CandidateModel],
    n_grid: RangeInclusive<usize>,
) -> Result<SelectionRule> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let (lo, hi) = (*n_grid.start(), *n_grid.end());
    if lo == 0 || lo > hi {
        return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}]")));
    }
    if lo > ctx.min_task_size() || hi < ctx.max_task_size() {
        return Err(Error::InvalidArgument(format!(
            "grid [{lo}, {hi}] does not cover the task sizes [{}, {}]",
            ctx.min_task_size(),
            ctx.max_task_size()
        )));
    }
    let within = candidates[0].within_task_categorical;
    if candidates
        .iter()
        .any(|c| c.within_task_categorical != within)
    {
        return Err(Error::InvalidArgument(
            "candidates disagree on the within-task categorical flag".into(),
        ));
    }

    // Fit each candidate once; the statistic is affine in 1/n.
    let mut components = Vec::with_capacity(candidates.len());
    for model in candidates {
        match cp_components(ctx, model) {
            Ok(parts) => components.push((model, parts)),
            Err(err) => log::warn!("skipping candidate {:?}: {err}", model.subset),
        }
    }
    if components.is_empty() {
        return Err(Error::NoCandidates);
    }

    let mut ranges: Vec<RuleRange> = Vec::new();
    for n in lo..=hi {
        let mut best: Option<(f64, &CandidateModel)> = None;
        for (model, parts) in &components {
            let entry = (cp_value_at(parts, n), *model);
            if best.is_none() || better(&entry, best.as_ref().unwrap()) {
                best = Some(entry);
            }
        }
        let winner = best.unwrap().1;
        match ranges.last_mut() {
            Some(last) if last.subset == winner.subset => last.n_high = n,
            _ => ranges.push(RuleRange {
                n_low: n,
                n_high: n,
                subset: winner.subset.clone(),
            }),
        }
    }

    Ok(SelectionRule {
        mode: ctx.mode,
        pool: ctx.pool.clone(),
        within_task_categorical: within,
        ranges,
    })
}

/// One task's fitted model inside a multi-task fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskFit {
    pub key: TaskKey,
    pub n: usize,
    pub subset: Vec<String>,
    pub encoder: Encoder,
    pub coefficients: Vec<f64>,
    pub dropped_columns: Vec<String>,
    pub rss: f64,
    pub sigma2_full: f64,
    pub record_ids: Vec<String>,
    /// Training predictions on the log-duration scale.
    pub training_predictions: Vec<f64>,
}

impl TaskFit {
    fn predict_response(&self, schema: &CovariateSchema, rec: &SurgeryRecord) -> Result<f64> {
        let row = self.encoder.encode_row(schema, rec)?;
        Ok(row
            .iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum())
    }
}

/// A prediction plus how it was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub log_duration: f64,
    /// The record's task was unseen in training; the global model answered.
    pub fallback: bool,
    /// Surgeon-mode composition used the global mean for an unseen
    /// operation type.
    pub used_type_mean_fallback: bool,
}

/// Per-task fits sharing one selection rule, with a global-model fallback
/// for unseen tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiTaskFit {
    pub mode: TaskMode,
    pub rule: SelectionRule,
    pub schema: CovariateSchema,
    pub centering: Option<TypeCentering>,
    pub tasks: Vec<TaskFit>,
    pub global_fallback: GlobalModel,
}

/// Fits every task with the subset the rule assigns to its sample size.
pub fn fit_multitask(ctx: &SelectionContext, rule: &SelectionRule) -> Result<MultiTaskFit> {
    let global_fallback = fit_global(ctx.dataset, &ctx.pool)?.0;

    let mut tasks = Vec::with_capacity(ctx.tasks.len());
    for task in &ctx.tasks {
        let model = rule.model_for(task.n).ok_or(Error::RuleGap(task.n))?;
        let d = model.dimension_for(task.dummy_count);
        if task.n <= d {
            return Err(Error::TaskTooSmall {
                task: task.key.to_string(),
                message: format!("n = {} with model dimension {d}", task.n),
            });
        }
        let (design, encoder) = ctx.task_design(task, &model)?;
        let fit = fit_ols(&design, &task.response)?;

        let record_ids: Vec<String> = task
            .indices
            .iter()
            .map(|&i| ctx.dataset.records()[i].record_id.clone())
            .collect();
        let training_predictions: Vec<f64> = task
            .indices
            .iter()
            .zip(&fit.fitted_values)
            .map(|(&i, &fitted)| match &ctx.centering {
                Some(c) => fitted + c.mean_for(&ctx.dataset.records()[i].operation_type_id),
                None => fitted,
            })
            .collect();

        tasks.push(TaskFit {
            key: task.key.clone(),
            n: task.n,
            subset: model.subset.clone(),
            encoder,
            coefficients: fit.coefficients,
            dropped_columns: fit.dropped_columns,
            rss: fit.rss,
            sigma2_full: task.sigma2,
            record_ids,
            training_predictions,
        });
    }

    Ok(MultiTaskFit {
        mode: ctx.mode,
        rule: rule.clone(),
        schema: ctx.dataset.schema().clone(),
        centering: ctx.centering.clone(),
        tasks,
        global_fallback,
    })
}

impl MultiTaskFit {
    pub fn task_for(&self, key: &TaskKey) -> Option<&TaskFit> {
        self.tasks.iter().find(|t| &t.key == key)
    }

    /// Predicts the log duration of one record. Records from unseen tasks
    /// fall back to the global model and are flagged.
    pub fn predict(&self, rec: &SurgeryRecord) -> Result<Prediction> {
        let key = TaskKey::for_record(self.mode, rec);
        match self.task_for(&key) {
            Some(task) => {
                let raw = task.predict_response(&self.schema, rec)?;
                match &self.centering {
                    Some(centering) => {
                        let unseen_type =
                            !centering.type_means.contains_key(&rec.operation_type_id);
                        Ok(Prediction {
                            log_duration: raw + centering.mean_for(&rec.operation_type_id),
                            fallback: false,
                            used_type_mean_fallback: unseen_type,
                        })
                    }
                    None => Ok(Prediction {
                        log_duration: raw,
                        fallback: false,
                        used_type_mean_fallback: false,
                    }),
                }
            }
            None => Ok(Prediction {
                log_duration: self.global_fallback.predict(&self.schema, rec)?,
                fallback: true,
                used_type_mean_fallback: false,
            }),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Recorded training predictions keyed by record id.
    pub fn training_prediction_map(&self) -> BTreeMap<&str, f64> {
        self.tasks
            .iter()
            .flat_map(|t| {
                t.record_ids
                    .iter()
                    .map(|s| s.as_str())
                    .zip(t.training_predictions.iter().copied())
            })
            .collect()
    }
}
