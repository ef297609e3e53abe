//! End-to-end wiring: eligibility filtering, covariate screening, selection,
//! per-task fitting, baseline comparisons, and report assembly.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_global, forward_select, lasso_fit, GlobalModel, DEFAULT_FS_MAX_K};
use crate::data::{
    eligibility_filter, partition_tasks, Dataset, SurgeryRecord, TaskKey, TaskMode,
    DEFAULT_MIN_TASK_SIZE, DEFAULT_OPTYPE_MIN, DEFAULT_SURGEON_MIN,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    kernel_smooth, repeated_kfold, CurvePoint, EvaluationReport, FamilyFigure, FigurePoint,
    MethodSummary, TaskRow, DEFAULT_CV_FOLDS, DEFAULT_CV_REPS,
};
use crate::filter::{
    drift_screen, mutual_information_rank, residual_filter, RankedCovariate,
    DEFAULT_DRIFT_THRESHOLD, DEFAULT_MI_BINS, DEFAULT_MI_K,
};
use crate::select::{
    build_selection_rule, candidate_universe, cp_statistic, fit_multitask,
    mode_uses_within_task_categorical, MultiTaskFit, SelectionContext, SelectionRule,
};
use crate::stats::derive_seed;

pub const DEFAULT_SEED: u64 = 20090512;
pub const DEFAULT_POOL_SIZE: usize = 6;
/// Interaction-mode tasks report test error only with this many test rows.
pub const DEFAULT_INTERACTION_TEST_MIN: usize = 10;
/// Baseline train-CV repetitions (the per-task CV uses `reps`).
pub const DEFAULT_BASELINE_REPS: usize = 20;

/// Options shared by the selection and fitting stages.
#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub mode: TaskMode,
    pub pool_size: usize,
    pub surgeon_min: usize,
    pub optype_min: usize,
    pub min_task_size: usize,
    /// Grid of sample sizes to sweep; defaults to the observed task range.
    pub grid: Option<(usize, usize)>,
}

impl SelectOptions {
    pub fn new(mode: TaskMode) -> Self {
        SelectOptions {
            mode,
            pool_size: DEFAULT_POOL_SIZE,
            surgeon_min: DEFAULT_SURGEON_MIN,
            optype_min: DEFAULT_OPTYPE_MIN,
            min_task_size: match mode {
                TaskMode::Surgeon => 1,
                TaskMode::OperationType | TaskMode::Interaction => DEFAULT_MIN_TASK_SIZE,
            },
            grid: None,
        }
    }
}

/// Which comparison models an evaluation run fits. The global model is
/// always fitted (it is the fallback and the benchmark line).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Global,
    Lasso,
    Mi,
    Fs,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Baseline::Global),
            "lasso" => Ok(Baseline::Lasso),
            "mi" => Ok(Baseline::Mi),
            "fs" => Ok(Baseline::Fs),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline `{other}` (expected global, lasso, mi or fs)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub select: SelectOptions,
    pub k: usize,
    pub reps: usize,
    pub baseline_reps: usize,
    pub seed: u64,
    pub baselines: Vec<Baseline>,
    /// Externally supplied predictions: record_id to predicted log duration.
    pub external: Option<BTreeMap<String, f64>>,
    pub drift_threshold: f64,
    pub mi_bins: usize,
    pub interaction_test_min: usize,
}

impl EvalOptions {
    pub fn new(mode: TaskMode) -> Self {
        EvalOptions {
            select: SelectOptions::new(mode),
            k: DEFAULT_CV_FOLDS,
            reps: DEFAULT_CV_REPS,
            baseline_reps: DEFAULT_BASELINE_REPS,
            seed: DEFAULT_SEED,
            baselines: vec![Baseline::Global],
            external: None,
            drift_threshold: DEFAULT_DRIFT_THRESHOLD,
            mi_bins: DEFAULT_MI_BINS,
            interaction_test_min: DEFAULT_INTERACTION_TEST_MIN,
        }
    }
}

fn ranked_pool(train: &Dataset, pool_size: usize) -> Result<(Vec<String>, Vec<RankedCovariate>)> {
    let k = pool_size.min(train.schema().len());
    let ranked = residual_filter(train, k)?;
    Ok((ranked.iter().map(|r| r.name.clone()).collect(), ranked))
}

/// Screens covariates and builds the sample-size-indexed selection rule.
pub fn run_selection(
    train: &Dataset,
    opts: &SelectOptions,
) -> Result<(SelectionRule, Vec<RankedCovariate>)> {
    let filtered = eligibility_filter(train, opts.surgeon_min, opts.optype_min);
    if filtered.is_empty() {
        return Err(Error::EmptyInput(
            "no records survive the eligibility thresholds".into(),
        ));
    }
    let (pool, ranked) = ranked_pool(&filtered, opts.pool_size)?;
    let partition = partition_tasks(&filtered, opts.mode, opts.min_task_size)?;
    let ctx = SelectionContext::build(&filtered, &partition, pool)?;
    let candidates =
        candidate_universe(&ctx.pool, mode_uses_within_task_categorical(opts.mode))?;
    let (lo, hi) = opts
        .grid
        .unwrap_or((ctx.min_task_size(), ctx.max_task_size()));
    let rule = build_selection_rule(&ctx, &candidates, lo..=hi)?;
    Ok((rule, ranked))
}

/// Fits every task of `train` under an existing rule.
pub fn run_fit(train: &Dataset, rule: &SelectionRule, opts: &SelectOptions) -> Result<MultiTaskFit> {
    let filtered = eligibility_filter(train, opts.surgeon_min, opts.optype_min);
    if filtered.is_empty() {
        return Err(Error::EmptyInput(
            "no records survive the eligibility thresholds".into(),
        ));
    }
    let partition = partition_tasks(&filtered, rule.mode, opts.min_task_size)?;
    let ctx = SelectionContext::build(&filtered, &partition, rule.pool.clone())?;
    fit_multitask(&ctx, rule)
}

fn pct(mse: f64) -> f64 {
    100.0 * mse.max(0.0).sqrt()
}

/// Smooth per-task (n, rmse) points; an empty curve when there are too few.
fn smooth_points(points: &[FigurePoint]) -> Vec<CurvePoint> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.n, p.rmse_pct)).collect();
    if pairs.len() < 2 {
        return Vec::new();
    }
    match kernel_smooth(&pairs, None) {
        Ok(curve) => curve
            .into_iter()
            .map(|(n, value)| CurvePoint { n, value })
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Log-spaced integer grid between the task-size extremes, deduplicated.
fn curve_grid(lo: usize, hi: usize) -> Vec<usize> {
    let (lo_f, hi_f) = (lo as f64, hi as f64);
    let mut out: Vec<usize> = (0..100)
        .map(|i| {
            let t = i as f64 / 99.0;
            (lo_f.ln() + t * (hi_f.ln() - lo_f.ln())).exp().round() as usize
        })
        .collect();
    out.dedup();
    out
}

struct PredictionSet {
    /// (task index, squared errors of this task's test rows)
    per_task: Vec<Vec<f64>>,
}

impl PredictionSet {
    fn task_rmse(&self, t: usize) -> Option<f64> {
        let errs = &self.per_task[t];
        if errs.is_empty() {
            None
        } else {
            Some(pct(errs.iter().sum::<f64>() / errs.len() as f64))
        }
    }

    fn pooled_rmse(&self, included: &[bool]) -> (Option<f64>, usize) {
        let mut total = 0.0;
        let mut count = 0usize;
        for (t, errs) in self.per_task.iter().enumerate() {
            if included[t] {
                total += errs.iter().sum::<f64>();
                count += errs.len();
            }
        }
        if count == 0 {
            (None, 0)
        } else {
            (Some(pct(total / count as f64)), count)
        }
    }
}

fn score_predictions<F>(
    test_groups: &[Vec<&SurgeryRecord>],
    mut predict: F,
) -> Result<PredictionSet>
where
    F: FnMut(&SurgeryRecord) -> Result<Option<f64>>,
{
    let mut per_task = Vec::with_capacity(test_groups.len());
    for group in test_groups {
        let mut errs = Vec::with_capacity(group.len());
        for rec in group {
            if let Some(pred) = predict(rec)? {
                let e = pred - rec.log_duration;
                errs.push(e * e);
            }
        }
        per_task.push(errs);
    }
    Ok(PredictionSet { per_task })
}

/// The full evaluation: select, fit, cross-validate, score the test split,
/// compare baselines, and assemble the report.
pub fn run_evaluation(train: &Dataset, test: &Dataset, opts: &EvalOptions) -> Result<EvaluationReport> {
    let mode = opts.select.mode;
    let filtered = eligibility_filter(train, opts.select.surgeon_min, opts.select.optype_min);
    if filtered.is_empty() {
        return Err(Error::EmptyInput(
            "no records survive the eligibility thresholds".into(),
        ));
    }
    let drift_flags = if test.is_empty() {
        Vec::new()
    } else {
        drift_screen(&filtered, test, opts.drift_threshold)?
    };

    let (pool, _) = ranked_pool(&filtered, opts.select.pool_size)?;
    let partition = partition_tasks(&filtered, mode, opts.select.min_task_size)?;
    let ctx = SelectionContext::build(&filtered, &partition, pool.clone())?;
    let candidates = candidate_universe(&ctx.pool, mode_uses_within_task_categorical(mode))?;
    let (lo, hi) = opts
        .select
        .grid
        .unwrap_or((ctx.min_task_size(), ctx.max_task_size()));
    let rule = build_selection_rule(&ctx, &candidates, lo..=hi)?;
    let fit = fit_multitask(&ctx, &rule)?;
    let global = &fit.global_fallback;

    // The statistic curve in RMSE-percent units.
    let cp_curve: Vec<CurvePoint> = curve_grid(lo, hi)
        .into_iter()
        .filter_map(|n| {
            let model = rule.model_for(n)?;
            cp_statistic(&ctx, &model, n).ok().map(|est| CurvePoint {
                n: n as f64,
                value: pct(est.value),
            })
        })
        .collect();

    // Group test records by task; the trailing group collects unseen tasks.
    let task_index: BTreeMap<&TaskKey, usize> = ctx
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (&t.key, i))
        .collect();
    let mut test_groups: Vec<Vec<&SurgeryRecord>> = vec![Vec::new(); ctx.tasks.len() + 1];
    for rec in test.records() {
        let key = TaskKey::for_record(mode, rec);
        match task_index.get(&key) {
            Some(&i) => test_groups[i].push(rec),
            None => test_groups[ctx.tasks.len()].push(rec),
        }
    }

    // Reporting rule: interaction-mode tasks need enough test rows; the
    // other modes report every task present in the test split.
    let min_test = match mode {
        TaskMode::Interaction => opts.interaction_test_min,
        _ => 1,
    };
    let included: Vec<bool> = test_groups[..ctx.tasks.len()]
        .iter()
        .map(|g| g.len() >= min_test)
        .collect();

    // Multi-task predictions and per-task rows.
    let mt_preds = score_predictions(&test_groups[..ctx.tasks.len()], |rec| {
        fit.predict(rec).map(|p| Some(p.log_duration))
    })?;

    let mut per_task = Vec::with_capacity(ctx.tasks.len());
    let mut cv_weighted = 0.0;
    let mut cv_weight = 0.0;
    let mut train_points = Vec::new();
    let mut test_points = Vec::new();
    for (t, task) in ctx.tasks.iter().enumerate() {
        let task_fit = &fit.tasks[t];
        let mean_log_duration = task
            .indices
            .iter()
            .map(|&i| filtered.records()[i].log_duration)
            .sum::<f64>()
            / task.n as f64;

        let design = task_fit.encoder.encode(&filtered, &task.indices)?;
        let cv_mse = match repeated_kfold(
            &design,
            &task.response,
            opts.k.min(task.n),
            opts.reps,
            derive_seed(opts.seed, 1000 + t as u64),
        ) {
            Ok(mse) => Some(mse),
            Err(err) => {
                log::warn!("task {}: cross-validation skipped: {err}", task.key);
                None
            }
        };
        if let Some(mse) = cv_mse {
            cv_weighted += task.n as f64 * mse;
            cv_weight += task.n as f64;
            train_points.push(FigurePoint {
                n: task.n as f64,
                rmse_pct: pct(mse),
                mean_log_duration,
            });
        }

        let test_rmse = if included[t] { mt_preds.task_rmse(t) } else { None };
        if let Some(r) = test_rmse {
            test_points.push(FigurePoint {
                n: task.n as f64,
                rmse_pct: r,
                mean_log_duration,
            });
        }

        let cp_rmse = rule
            .model_for(task.n)
            .and_then(|m| cp_statistic(&ctx, &m, task.n).ok())
            .map(|est| pct(est.value));

        let n_fallback = test_groups[t]
            .iter()
            .map(|rec| match fit.predict(rec) {
                Ok(p) if p.fallback || p.used_type_mean_fallback => 1,
                _ => 0,
            })
            .sum();

        per_task.push(TaskRow {
            task_key: task.key.to_string(),
            mode: mode.to_string(),
            n_train: task.n,
            n_test: test_groups[t].len(),
            mean_log_duration,
            cv_rmse_pct: cv_mse.map(pct),
            test_rmse_pct: test_rmse,
            cp_rmse_pct: cp_rmse,
            n_fallback,
        });
    }

    let (mt_test_rmse, mt_test_obs) = mt_preds.pooled_rmse(&included);
    let mt_train_cv = if cv_weight > 0.0 {
        Some(pct(cv_weighted / cv_weight))
    } else {
        None
    };

    let mut methods = vec![MethodSummary {
        method: "multitask".into(),
        train_cv_rmse_pct: mt_train_cv,
        test_rmse_pct: mt_test_rmse,
        n_tasks: ctx.tasks.len(),
        n_test_obs: mt_test_obs,
    }];

    // Global model: always fitted (it is the fallback); its CV error gives
    // the benchmark line.
    let global_cv = global_cv_rmse(&filtered, global, opts)?;
    let global_preds = score_predictions(&test_groups[..ctx.tasks.len()], |rec| {
        global.predict(filtered.schema(), rec).map(Some)
    })?;
    let (global_test, global_test_obs) = global_preds.pooled_rmse(&included);
    methods.push(MethodSummary {
        method: "global".into(),
        train_cv_rmse_pct: global_cv,
        test_rmse_pct: global_test,
        n_tasks: ctx.tasks.len(),
        n_test_obs: global_test_obs,
    });
    let benchmark = global_test.or(global_cv).unwrap_or(0.0);

    let mut figures = vec![
        FamilyFigure {
            method: "multitask".into(),
            split: "train_cv".into(),
            smooth: smooth_points(&train_points),
            points: train_points,
            cp_curve: cp_curve.clone(),
            global_rmse_pct: global_cv.unwrap_or(benchmark),
        },
        FamilyFigure {
            method: "multitask".into(),
            split: "test".into(),
            smooth: smooth_points(&test_points),
            points: test_points,
            cp_curve: cp_curve.clone(),
            global_rmse_pct: benchmark,
        },
    ];

    let baseline_figure = |name: &str, preds: &PredictionSet| {
        let points: Vec<FigurePoint> = (0..ctx.tasks.len())
            .filter(|&t| included[t])
            .filter_map(|t| {
                preds.task_rmse(t).map(|r| FigurePoint {
                    n: ctx.tasks[t].n as f64,
                    rmse_pct: r,
                    mean_log_duration: per_task[t].mean_log_duration,
                })
            })
            .collect();
        FamilyFigure {
            method: name.into(),
            split: "test".into(),
            smooth: smooth_points(&points),
            points,
            cp_curve: cp_curve.clone(),
            global_rmse_pct: benchmark,
        }
    };

    if opts.baselines.contains(&Baseline::Global) {
        figures.push(baseline_figure("global", &global_preds));
    }

    if opts.baselines.contains(&Baseline::Lasso) {
        let (lasso, lasso_encoder) = lasso_fit(
            &filtered,
            None,
            opts.k,
            derive_seed(opts.seed, 2001),
        )?;
        let cv_at_lambda = lasso
            .cv_curve
            .iter()
            .find(|(l, _)| *l == lasso.lambda)
            .map(|(_, mse)| pct(*mse));
        let preds = score_predictions(&test_groups[..ctx.tasks.len()], |rec| {
            let row = lasso_encoder.encode_row(filtered.schema(), rec)?;
            Ok(Some(lasso.predict_row(&row)))
        })?;
        let (test_rmse, test_obs) = preds.pooled_rmse(&included);
        methods.push(MethodSummary {
            method: "lasso".into(),
            train_cv_rmse_pct: cv_at_lambda,
            test_rmse_pct: test_rmse,
            n_tasks: ctx.tasks.len(),
            n_test_obs: test_obs,
        });
        figures.push(baseline_figure("lasso", &preds));
    }

    if opts.baselines.contains(&Baseline::Mi) {
        let k = DEFAULT_MI_K.min(filtered.schema().len());
        let ranked = mutual_information_rank(&filtered, k, opts.mi_bins)?;
        let names: Vec<String> = ranked.into_iter().map(|r| r.name).collect();
        let (summary, preds) = refit_baseline(
            "mi",
            &filtered,
            &names,
            &test_groups[..ctx.tasks.len()],
            &included,
            opts,
            3001,
        )?;
        methods.push(summary);
        figures.push(baseline_figure("mi", &preds));
    }

    if opts.baselines.contains(&Baseline::Fs) {
        let max_k = DEFAULT_FS_MAX_K.min(filtered.schema().len());
        let pool_all: Vec<String> = filtered.schema().names().map(|s| s.to_string()).collect();
        let names = forward_select(&filtered, &pool_all, max_k)?;
        let (summary, preds) = refit_baseline(
            "fs",
            &filtered,
            &names,
            &test_groups[..ctx.tasks.len()],
            &included,
            opts,
            3002,
        )?;
        methods.push(summary);
        figures.push(baseline_figure("fs", &preds));
    }

    if let Some(external) = &opts.external {
        let preds = score_predictions(&test_groups[..ctx.tasks.len()], |rec| {
            Ok(external.get(&rec.record_id).copied())
        })?;
        let (test_rmse, test_obs) = preds.pooled_rmse(&included);
        methods.push(MethodSummary {
            method: "external".into(),
            train_cv_rmse_pct: None,
            test_rmse_pct: test_rmse,
            n_tasks: ctx.tasks.len(),
            n_test_obs: test_obs,
        });
        figures.push(baseline_figure("external", &preds));
    }

    Ok(EvaluationReport {
        mode: mode.to_string(),
        seed: opts.seed,
        per_task,
        methods,
        cp_curve,
        drift_flags,
        figures,
    })
}

fn global_cv_rmse(
    filtered: &Dataset,
    global: &GlobalModel,
    opts: &EvalOptions,
) -> Result<Option<f64>> {
    let indices: Vec<usize> = (0..filtered.len()).collect();
    let design = global.encoder.encode(filtered, &indices)?;
    let y: Vec<f64> = filtered.records().iter().map(|r| r.log_duration).collect();
    match repeated_kfold(
        &design,
        &y,
        opts.k.min(filtered.len()),
        opts.baseline_reps,
        derive_seed(opts.seed, 2000),
    ) {
        Ok(mse) => Ok(Some(pct(mse))),
        Err(err) => {
            log::warn!("global model cross-validation skipped: {err}");
            Ok(None)
        }
    }
}

/// Refits the global-style model on a screened covariate list and scores it.
fn refit_baseline(
    name: &str,
    filtered: &Dataset,
    covariates: &[String],
    test_groups: &[Vec<&SurgeryRecord>],
    included: &[bool],
    opts: &EvalOptions,
    seed_stream: u64,
) -> Result<(MethodSummary, PredictionSet)> {
    let (model, _) = fit_global(filtered, covariates)?;
    let indices: Vec<usize> = (0..filtered.len()).collect();
    let design = model.encoder.encode(filtered, &indices)?;
    let y: Vec<f64> = filtered.records().iter().map(|r| r.log_duration).collect();
    let cv = match repeated_kfold(
        &design,
        &y,
        opts.k.min(filtered.len()),
        opts.baseline_reps,
        derive_seed(opts.seed, seed_stream),
    ) {
        Ok(mse) => Some(pct(mse)),
        Err(err) => {
            log::warn!("{name} baseline cross-validation skipped: {err}");
            None
        }
    };
    let preds = score_predictions(test_groups, |rec| {
        model.predict(filtered.schema(), rec).map(Some)
    })?;
    let (test_rmse, test_obs) = preds.pooled_rmse(included);
    Ok((
        MethodSummary {
            method: name.into(),
            train_cv_rmse_pct: cv,
            test_rmse_pct: test_rmse,
            n_tasks: test_groups.len(),
            n_test_obs: test_obs,
        },
        preds,
    ))
}

/// Scores a model specification on one task's records by repeated k-fold
/// cross-validation; exposed for report tooling and tests.
pub fn task_cv_mse(
    dataset: &Dataset,
    ctx: &SelectionContext,
    task_index: usize,
    fit: &MultiTaskFit,
    k: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let task = &ctx.tasks[task_index];
    let design = fit.tasks[task_index].encoder.encode(dataset, &task.indices)?;
    repeated_kfold(&design, &task.response, k, reps, seed)
}
