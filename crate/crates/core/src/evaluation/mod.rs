//! Prediction-error metrics, repeated k-fold cross-validation, kernel
//! smoothing of error-versus-sample-size scatter, and report emission.

mod svg;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::{fit_ols, DesignMatrix};
use crate::stats::{self, derive_seed};

pub const DEFAULT_CV_FOLDS: usize = 10;
pub const DEFAULT_CV_REPS: usize = 500;

/// Root mean squared error of natural-log values, scaled by 100 so it reads
/// as an approximate percent deviation.
pub fn rmse_log(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyInput("rmse over zero pairs".into()));
    }
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} actuals",
            predicted.len(),
            actual.len()
        )));
    }
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(100.0 * mse.sqrt())
}

/// Mean squared prediction error by k-fold cross-validation repeated `reps`
/// times. Each repetition shuffles with a seed derived from `seed`, splits
/// into k near-equal folds, fits on k-1 of them, and scores the held-out
/// fold; the grand mean over all held-out predictions is returned.
/// Repetitions run in parallel; the reduction order is fixed.
pub fn repeated_kfold(
    x: &DesignMatrix,
    y: &[f64],
    k: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for n = {n}"
        )));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let d = x.n_cols();
    let max_fold = (0..k).map(|f| (f + 1) * n / k - f * n / k).max().unwrap();
    if n - max_fold <= d {
        return Err(Error::FoldTooSmall { n, k, dimension: d });
    }

    let rep_sums: Vec<Result<(f64, usize)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
            order.shuffle(&mut rng);

            let mut sq_sum = 0.0;
            let mut count = 0usize;
            for f in 0..k {
                let held: &[usize] = &order[f * n / k..(f + 1) * n / k];
                if held.is_empty() {
                    continue;
                }
                let mut in_fold = vec![false; n];
                for &i in held {
                    in_fold[i] = true;
                }
                let train_rows: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();

                let mut sub = Array2::zeros((train_rows.len(), d));
                let mut ysub = Vec::with_capacity(train_rows.len());
                for (r, &i) in train_rows.iter().enumerate() {
                    for c in 0..d {
                        sub[[r, c]] = x.values()[[i, c]];
                    }
                    ysub.push(y[i]);
                }
                let design = DesignMatrix::new(
                    sub,
                    x.column_names().to_vec(),
                    x.includes_intercept(),
                )?;
                let fit = fit_ols(&design, &ysub)?;

                for &i in held {
                    let pred: f64 = (0..d)
                        .map(|c| x.values()[[i, c]] * fit.coefficients[c])
                        .sum();
                    let e = y[i] - pred;
                    sq_sum += e * e;
                    count += 1;
                }
            }
            Ok((sq_sum, count))
        })
        .collect();

    let mut total = 0.0;
    let mut count = 0usize;
    for r in rep_sums {
        let (s, c) = r?;
        total += s;
        count += c;
    }
    Ok(total / count as f64)
}

/// Nadaraya-Watson smoothing of (sample size, error) points with a Gaussian
/// kernel on the log sample-size scale, evaluated on a 100-point grid
/// spanning the observed sizes. `bandwidth = None` uses Silverman's rule on
/// the log sizes and errors out when that is degenerate.
pub fn kernel_smooth(
    points: &[(f64, f64)],
    bandwidth: Option<f64>,
) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::EmptyInput("kernel smoothing needs two points".into()));
    }
    if points.iter().any(|(n, e)| *n <= 0.0 || !n.is_finite() || !e.is_finite()) {
        return Err(Error::NonFinite("smoothing input".into()));
    }
    let log_n: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(_) => return Err(Error::InvalidArgument("bandwidth must be positive".into())),
        None => {
            let m = log_n.len() as f64;
            let sd = stats::sample_variance(&log_n).sqrt();
            let mut sorted = log_n.clone();
            sorted.sort_by(f64::total_cmp);
            let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            let h = 0.9 * spread * m.powf(-0.2);
            if h.is_nan() || h <= 0.0 {
                return Err(Error::BandwidthRequired);
            }
            h
        }
    };

    let lo = log_n.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid_len = 100;
    let curve = (0..grid_len)
        .map(|g| {
            let t = if grid_len > 1 {
                g as f64 / (grid_len - 1) as f64
            } else {
                0.0
            };
            let q = lo + t * (hi - lo);
            let mut num = 0.0;
            let mut den = 0.0;
            for ((_, e), ln) in points.iter().zip(&log_n) {
                let z = (q - ln) / h;
                let w = (-0.5 * z * z).exp();
                num += w * e;
                den += w;
            }
            let value = if den > 0.0 {
                num / den
            } else {
                // All weights underflowed: take the nearest point.
                let nearest = log_n
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| (q - **a).abs().total_cmp(&(q - **b).abs()))
                    .map(|(i, _)| i)
                    .unwrap();
                points[nearest].1
            };
            (q.exp(), value)
        })
        .collect();
    Ok(curve)
}

/// One row of the per-task report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_key: String,
    pub mode: String,
    pub n_train: usize,
    pub n_test: usize,
    pub mean_log_duration: f64,
    pub cv_rmse_pct: Option<f64>,
    pub test_rmse_pct: Option<f64>,
    pub cp_rmse_pct: Option<f64>,
    pub n_fallback: usize,
}

/// Aggregate errors of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub train_cv_rmse_pct: Option<f64>,
    pub test_rmse_pct: Option<f64>,
    pub n_tasks: usize,
    pub n_test_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: f64,
    pub value: f64,
}

/// One scatter mark: a task's sample size, its error, and its mean log
/// duration (drawn as the marker size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub n: f64,
    pub rmse_pct: f64,
    pub mean_log_duration: f64,
}

/// Everything one error-versus-sample-size figure needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFigure {
    pub method: String,
    /// "train_cv" or "test".
    pub split: String,
    pub points: Vec<FigurePoint>,
    /// The selection statistic in RMSE-percent units.
    pub cp_curve: Vec<CurvePoint>,
    /// Horizontal benchmark line.
    pub global_rmse_pct: f64,
    /// Kernel smoothing of the scatter.
    pub smooth: Vec<CurvePoint>,
}

/// The full evaluation output: per-task rows, per-method aggregates, the
/// statistic curve, drift warnings, and figure data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: String,
    pub seed: u64,
    pub per_task: Vec<TaskRow>,
    pub methods: Vec<MethodSummary>,
    pub cp_curve: Vec<CurvePoint>,
    pub drift_flags: Vec<crate::filter::DriftFlag>,
    pub figures: Vec<FamilyFigure>,
}

/// Which artifacts `emit_report` writes.
#[derive(Debug, Clone, Copy)]
pub struct ReportFormats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for ReportFormats {
    fn default() -> Self {
        ReportFormats {
            csv: true,
            json: true,
            svg: true,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-task CSV, the aggregate JSON, the full report JSON, and
/// one SVG per figure into `out_dir`. Returns the written paths.
pub fn emit_report(
    report: &EvaluationReport,
    out_dir: &Path,
    formats: ReportFormats,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    if formats.csv {
        let path = out_dir.join("per_task.csv");
        let mut writer =
            csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        writer
            .write_record([
                "task_key",
                "mode",
                "n_train",
                "n_test",
                "mean_log_duration",
                "cv_rmse_pct",
                "test_rmse_pct",
                "cp_rmse_pct",
                "n_fallback",
            ])
            .map_err(|e| Error::format(&path, e.to_string()))?;
        for row in &report.per_task {
            writer
                .write_record([
                    row.task_key.clone(),
                    row.mode.clone(),
                    row.n_train.to_string(),
                    row.n_test.to_string(),
                    row.mean_log_duration.to_string(),
                    fmt_opt(row.cv_rmse_pct),
                    fmt_opt(row.test_rmse_pct),
                    fmt_opt(row.cp_rmse_pct),
                    row.n_fallback.to_string(),
                ])
                .map_err(|e| Error::format(&path, e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if formats.json {
        let path = out_dir.join("aggregate.json");
        let text = serde_json::to_string_pretty(&report.methods)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = out_dir.join("report.json");
        let text = serde_json::to_string_pretty(report)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if formats.svg {
        for figure in &report.figures {
            let path = out_dir.join(format!("figure_{}_{}.svg", figure.method, figure.split));
            std::fs::write(&path, svg::render_figure(figure)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ols::loo_residuals;
    use rand::Rng;

    fn random_design(seed: u64, n: usize, d: usize) -> (DesignMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Array2::zeros((n, d));
        for i in 0..n {
            values[[i, 0]] = 1.0;
            for j in 1..d {
                values[[i, j]] = rng.random_range(-2.0..2.0);
            }
        }
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let x = DesignMatrix::new(values, names, true).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                1.0 + 0.8 * x.values()[[i, 1]]
                    - 0.3 * x.values()[[i, d - 1]]
                    + 0.3 * rng.random_range(-1.0..1.0)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn rmse_of_perfect_prediction_is_zero() {
        assert_eq!(rmse_log(&[4.0, 4.5], &[4.0, 4.5]).unwrap(), 0.0);
    }

    #[test]
    fn cv_defaults_match_the_evaluation_protocol() {
        assert_eq!(DEFAULT_CV_FOLDS, 10);
        assert_eq!(DEFAULT_CV_REPS, 500);
    }

    #[test]
    fn rmse_single_pair_arithmetic() {
        let got = rmse_log(&[4.0], &[4.3]).unwrap();
        assert!((got - 30.0).abs() < 1e-10);
    }

    #[test]
    fn rmse_rejects_empty_and_is_permutation_invariant() {
        assert!(matches!(rmse_log(&[], &[]), Err(Error::EmptyInput(_))));
        let a = rmse_log(&[4.0, 5.0, 3.0], &[4.1, 4.8, 3.3]).unwrap();
        let b = rmse_log(&[3.0, 4.0, 5.0], &[3.3, 4.1, 4.8]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cv_on_noiseless_linear_data_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let mut values = Array2::zeros((n, 2));
        for i in 0..n {
            values[[i, 0]] = 1.0;
            values[[i, 1]] = rng.random_range(-2.0..2.0);
        }
        let x = DesignMatrix::new(values, vec!["i".into(), "x".into()], true).unwrap();
        let y: Vec<f64> = (0..n).map(|i| 2.0 + 3.0 * x.values()[[i, 1]]).collect();
        let err = repeated_kfold(&x, &y, 10, 3, 1).unwrap();
        assert!(err <= 1e-16, "cv error {err}");
    }

    #[test]
    fn leave_one_out_matches_hat_matrix_closed_form() {
        for seed in 0..5 {
            let (x, y) = random_design(seed, 25, 3);
            let cv = repeated_kfold(&x, &y, 25, 1, 7).unwrap();
            let fit = fit_ols(&x, &y).unwrap();
            let loo = loo_residuals(&fit, &x).unwrap();
            let oracle = loo.iter().map(|e| e * e).sum::<f64>() / 25.0;
            assert!((cv - oracle).abs() < 1e-8, "seed {seed}: {cv} vs {oracle}");
        }
    }

    #[test]
    fn cv_is_reproducible_and_seed_sensitive() {
        let (x, y) = random_design(3, 30, 3);
        let a = repeated_kfold(&x, &y, 5, 10, 42).unwrap();
        let b = repeated_kfold(&x, &y, 5, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = repeated_kfold(&x, &y, 5, 10, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn more_repetitions_stabilize_the_estimate() {
        let (x, y) = random_design(9, 30, 3);
        let spread = |reps: usize| {
            let values: Vec<f64> = (0..20)
                .map(|s| repeated_kfold(&x, &y, 10, reps, s).unwrap())
                .collect();
            stats::sample_variance(&values)
        };
        assert!(spread(100) < spread(5));
    }

    #[test]
    fn cv_rejects_undersized_folds() {
        let (x, y) = random_design(1, 10, 6);
        assert!(matches!(
            repeated_kfold(&x, &y, 2, 1, 1),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn smoothing_a_constant_is_the_constant() {
        let points: Vec<(f64, f64)> = (1..=20).map(|i| (10.0 * i as f64, 7.5)).collect();
        let curve = kernel_smooth(&points, None).unwrap();
        assert_eq!(curve.len(), 100);
        for (_, v) in curve {
            assert!((v - 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_bandwidth_recovers_the_global_mean() {
        let points = vec![(10.0, 1.0), (40.0, 2.0), (90.0, 6.0), (200.0, 3.0)];
        let mean = (1.0 + 2.0 + 6.0 + 3.0) / 4.0;
        let curve = kernel_smooth(&points, Some(1e6)).unwrap();
        for (_, v) in curve {
            assert!((v - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothing_matches_hand_rolled_weighted_sum() {
        let points = vec![
            (15.0, 40.0),
            (30.0, 35.0),
            (60.0, 31.0),
            (120.0, 29.0),
            (500.0, 27.0),
        ];
        let curve = kernel_smooth(&points, Some(1.0)).unwrap();
        // Check an interior grid point directly.
        let (q_n, got) = curve[37];
        let q = q_n.ln();
        let mut num = 0.0;
        let mut den = 0.0;
        for (n, e) in &points {
            let z = (q - n.ln()) / 1.0;
            let w = (-0.5 * z * z).exp();
            num += w * e;
            den += w;
        }
        assert!((got - num / den).abs() < 1e-12);
    }

    #[test]
    fn degenerate_auto_bandwidth_demands_an_explicit_one() {
        let points = vec![(50.0, 1.0), (50.0, 2.0), (50.0, 3.0)];
        assert!(matches!(
            kernel_smooth(&points, None),
            Err(Error::BandwidthRequired)
        ));
        // An explicit bandwidth still works.
        let curve = kernel_smooth(&points, Some(0.5)).unwrap();
        assert!((curve[0].1 - 2.0).abs() < 1e-12);
    }

    fn sample_report() -> EvaluationReport {
        let figure = FamilyFigure {
            method: "multitask".into(),
            split: "test".into(),
            points: vec![
                FigurePoint {
                    n: 52.0,
                    rmse_pct: 31.0,
                    mean_log_duration: 4.1,
                },
                FigurePoint {
                    n: 410.0,
                    rmse_pct: 27.5,
                    mean_log_duration: 4.6,
                },
            ],
            cp_curve: vec![
                CurvePoint { n: 52.0, value: 33.0 },
                CurvePoint { n: 410.0, value: 28.0 },
            ],
            global_rmse_pct: 30.0,
            smooth: vec![
                CurvePoint { n: 52.0, value: 31.0 },
                CurvePoint { n: 410.0, value: 27.5 },
            ],
        };
        EvaluationReport {
            mode: "surgeon".into(),
            seed: 20090512,
            per_task: vec![
                TaskRow {
                    task_key: "S001".into(),
                    mode: "surgeon".into(),
                    n_train: 52,
                    n_test: 9,
                    mean_log_duration: 4.1,
                    cv_rmse_pct: Some(31.0),
                    test_rmse_pct: Some(32.5),
                    cp_rmse_pct: Some(33.0),
                    n_fallback: 0,
                },
                TaskRow {
                    task_key: "S002".into(),
                    mode: "surgeon".into(),
                    n_train: 410,
                    n_test: 0,
                    mean_log_duration: 4.6,
                    cv_rmse_pct: Some(27.5),
                    test_rmse_pct: None,
                    cp_rmse_pct: Some(28.0),
                    n_fallback: 0,
                },
            ],
            methods: vec![MethodSummary {
                method: "multitask".into(),
                train_cv_rmse_pct: Some(29.0),
                test_rmse_pct: Some(29.5),
                n_tasks: 2,
                n_test_obs: 9,
            }],
            cp_curve: vec![CurvePoint { n: 52.0, value: 33.0 }],
            drift_flags: vec![],
            figures: vec![figure],
        }
    }

    /// Minimal tag scanner: returns (tag name, is_closing) pairs.
    fn scan_tags(doc: &str) -> Vec<(String, bool)> {
        let mut tags = Vec::new();
        for part in doc.split('<').skip(1) {
            let closing = part.starts_with('/');
            let body = part.trim_start_matches('/');
            let name: String = body
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect();
            if !name.is_empty() {
                tags.push((name, closing));
            }
        }
        tags
    }

    #[test]
    fn emit_writes_csv_json_and_svg() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let written = emit_report(&report, dir.path(), ReportFormats::default()).unwrap();
        assert_eq!(written.len(), 4);

        // CSV: header + one line per task.
        let csv_text = std::fs::read_to_string(dir.path().join("per_task.csv")).unwrap();
        let lines: Vec<&str> = csv_text.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("task_key,mode,n_train,n_test,mean_log_duration"));

        // JSON round trip equals the in-memory report.
        let json_text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: EvaluationReport = serde_json::from_str(&json_text).unwrap();
        assert_eq!(back, report);
        let agg_text = std::fs::read_to_string(dir.path().join("aggregate.json")).unwrap();
        let methods: Vec<MethodSummary> = serde_json::from_str(&agg_text).unwrap();
        assert_eq!(methods, report.methods);

        // SVG: one circle per task, exactly three curve paths, no scripts.
        let svg_text =
            std::fs::read_to_string(dir.path().join("figure_multitask_test.svg")).unwrap();
        let tags = scan_tags(&svg_text);
        let circles = tags.iter().filter(|(t, c)| t == "circle" && !c).count();
        let paths = tags.iter().filter(|(t, c)| t == "path" && !c).count();
        assert_eq!(circles, report.figures[0].points.len());
        assert_eq!(paths, 3);
        assert!(!tags.iter().any(|(t, _)| t == "script"));
        assert_eq!(tags.first().map(|(t, c)| (t.as_str(), *c)), Some(("svg", false)));
        assert_eq!(tags.last().map(|(t, c)| (t.as_str(), *c)), Some(("svg", true)));
        assert!(svg_text.contains("viewBox=\"0 0 960 640\""));
    }
}
