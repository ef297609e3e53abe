//! L1-penalized least squares by cyclic coordinate descent over a geometric
//! regularization path, with the strength chosen by k-fold cross-validation.
//!
//! The design is standardized internally (centered columns, unit 1/n
//! variance, centered response); the intercept is unpenalized and recovered
//! from the means. Coefficients are reported on the original scale.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalField, Dataset, Encoder};
use crate::error::{Error, Result};
use crate::stats::derive_seed;

const CD_TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 100_000;
/// 100-point geometric grid from lambda_max down to lambda_max / 1e4.
const GRID_POINTS: usize = 100;
const GRID_RATIO: f64 = 1e-4;

/// One point of the regularization path, on the original covariate scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoPathPoint {
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// L1 norm of the coefficients on the standardized scale, where the
    /// path's monotonicity in lambda holds.
    pub l1_norm_standardized: f64,
}

/// The cross-validated lasso solution and its full path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub intercept: f64,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub path: Vec<LassoPathPoint>,
    /// (lambda, pooled CV mean squared error), in path order.
    pub cv_curve: Vec<(f64, f64)>,
}

impl LassoFit {
    /// Covariates with nonzero coefficients at the chosen lambda.
    pub fn active_set(&self) -> Vec<&str> {
        self.column_names
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, &b)| b != 0.0)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coefficients)
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

struct Standardized {
    /// Column-major centered and scaled design.
    cols: Vec<Vec<f64>>,
    col_mean: Vec<f64>,
    col_scale: Vec<f64>,
    /// Squared column norm / n; 0 marks a degenerate column.
    cnorm: Vec<f64>,
    y_mean: f64,
    y_centered: Vec<f64>,
}

fn standardize(columns: &[Vec<f64>], y: &[f64]) -> Standardized {
    let n = y.len() as f64;
    let mut cols = Vec::with_capacity(columns.len());
    let mut col_mean = Vec::with_capacity(columns.len());
    let mut col_scale = Vec::with_capacity(columns.len());
    let mut cnorm = Vec::with_capacity(columns.len());
    for col in columns {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let std_col: Vec<f64> = col.iter().map(|v| (v - mean) / scale).collect();
        let sq = std_col.iter().map(|v| v * v).sum::<f64>() / n;
        cols.push(std_col);
        col_mean.push(mean);
        col_scale.push(scale);
        cnorm.push(sq);
    }
    let y_mean = y.iter().sum::<f64>() / n;
    let y_centered = y.iter().map(|v| v - y_mean).collect();
    Standardized {
        cols,
        col_mean,
        col_scale,
        cnorm,
        y_mean,
        y_centered,
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// One cyclic pass over the given coordinates; returns the largest
/// coefficient change.
fn sweep(
    std: &Standardized,
    lambda: f64,
    coords: &[usize],
    beta: &mut [f64],
    residual: &mut [f64],
) -> f64 {
    let n = residual.len() as f64;
    let mut max_delta = 0.0f64;
    for &j in coords {
        if std.cnorm[j] == 0.0 {
            continue;
        }
        let col = &std.cols[j];
        let old = beta[j];
        let grad: f64 = col.iter().zip(residual.iter()).map(|(x, r)| x * r).sum::<f64>() / n;
        let z = grad + old * std.cnorm[j];
        let new = soft_threshold(z, lambda) / std.cnorm[j];
        if new != old {
            let delta = new - old;
            for (r, x) in residual.iter_mut().zip(col) {
                *r -= delta * x;
            }
            beta[j] = new;
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

/// Coordinate descent at one lambda, warm-started from `beta`. Full sweeps
/// alternate with sweeps over the active set until the largest coefficient
/// change in a full sweep drops below 1e-7.
fn descend(std: &Standardized, lambda: f64, beta: &mut [f64], residual: &mut [f64]) -> Result<()> {
    let all: Vec<usize> = (0..std.cols.len()).collect();
    let mut sweeps = 0usize;
    loop {
        let delta = sweep(std, lambda, &all, beta, residual);
        sweeps += 1;
        if delta < CD_TOL {
            return Ok(());
        }
        loop {
            let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
            if active.is_empty() {
                break;
            }
            let delta = sweep(std, lambda, &active, beta, residual);
            sweeps += 1;
            if delta < CD_TOL {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(Error::NonConvergence {
                    lambda,
                    sweeps: MAX_SWEEPS,
                });
            }
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NonConvergence {
                lambda,
                sweeps: MAX_SWEEPS,
            });
        }
    }
}

fn auto_grid(std: &Standardized) -> Vec<f64> {
    let n = std.y_centered.len() as f64;
    let lambda_max = std
        .cols
        .iter()
        .map(|col| {
            (col.iter()
                .zip(&std.y_centered)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / n)
                .abs()
        })
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let log_max = lambda_max.ln();
    let log_min = (lambda_max * GRID_RATIO).ln();
    (0..GRID_POINTS)
        .map(|i| {
            let t = i as f64 / (GRID_POINTS - 1) as f64;
            (log_max + t * (log_min - log_max)).exp()
        })
        .collect()
}

/// Solves the path on standardized data; returns std-scale coefficient
/// vectors in grid order.
fn solve_path(std: &Standardized, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut beta = vec![0.0; std.cols.len()];
    let mut residual = std.y_centered.clone();
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        descend(std, lambda, &mut beta, &mut residual)?;
        out.push(beta.clone());
    }
    Ok(out)
}

fn near_equal_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    (0..k)
        .map(|f| indices[f * n / k..(f + 1) * n / k].to_vec())
        .collect()
}

/// Lasso on caller-supplied raw columns (no intercept column; it is handled
/// through centering). `lambda_grid = None` uses the automatic geometric
/// grid. Folds run in parallel; the result is independent of scheduling.
pub fn lasso_solve(
    columns: &[Vec<f64>],
    column_names: &[String],
    y: &[f64],
    lambda_grid: Option<Vec<f64>>,
    cv_folds: usize,
    seed: u64,
) -> Result<LassoFit> {
    let n = y.len();
    if columns.is_empty() || n == 0 {
        return Err(Error::EmptyInput("lasso needs data".into()));
    }
    if columns.len() != column_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns for {} names",
            columns.len(),
            column_names.len()
        )));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch("ragged design".into()));
    }
    if cv_folds < 2 || cv_folds > n {
        return Err(Error::InvalidArgument(format!(
            "cv_folds = {cv_folds} out of range for n = {n}"
        )));
    }

    let std_full = standardize(columns, y);
    let mut grid = match lambda_grid {
        Some(g) => {
            if g.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(Error::InvalidArgument(
                    "lambda grid must be nonnegative and finite".into(),
                ));
            }
            g
        }
        None => auto_grid(&std_full),
    };
    // Warm starts need a descending path.
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    // Cross-validation: per fold, fit the path on the complement and score
    // the held-out rows at every lambda.
    let folds = near_equal_folds(n, cv_folds, derive_seed(seed, 0x1a55));
    let fold_errors: Vec<Result<Vec<f64>>> = folds
        .par_iter()
        .map(|held_out| {
            let mut in_fold = vec![false; n];
            for &i in held_out {
                in_fold[i] = true;
            }
            let train_rows: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let sub_cols: Vec<Vec<f64>> = columns
                .iter()
                .map(|c| train_rows.iter().map(|&i| c[i]).collect())
                .collect();
            let sub_y: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
            let std_fold = standardize(&sub_cols, &sub_y);
            let path = solve_path(&std_fold, &grid)?;
            let errors: Vec<f64> = path
                .iter()
                .map(|beta| {
                    held_out
                        .iter()
                        .map(|&i| {
                            let pred = std_fold.y_mean
                                + beta
                                    .iter()
                                    .enumerate()
                                    .map(|(j, b)| {
                                        b * (columns[j][i] - std_fold.col_mean[j])
                                            / std_fold.col_scale[j]
                                    })
                                    .sum::<f64>();
                            let e = y[i] - pred;
                            e * e
                        })
                        .sum::<f64>()
                })
                .collect();
            Ok(errors)
        })
        .collect();

    let mut sq_err_by_lambda = vec![0.0f64; grid.len()];
    for fold in fold_errors {
        for (acc, e) in sq_err_by_lambda.iter_mut().zip(fold?) {
            *acc += e;
        }
    }
    let cv_curve: Vec<(f64, f64)> = grid
        .iter()
        .zip(&sq_err_by_lambda)
        .map(|(&l, &s)| (l, s / n as f64))
        .collect();

    // Grid is descending, so a strict minimum keeps the largest lambda among
    // exact ties (the sparser model).
    let best_idx = cv_curve
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap();

    // Full-data path on the original scale.
    let std_path = solve_path(&std_full, &grid)?;
    let path: Vec<LassoPathPoint> = grid
        .iter()
        .zip(&std_path)
        .map(|(&lambda, beta_std)| {
            let coefficients: Vec<f64> = beta_std
                .iter()
                .enumerate()
                .map(|(j, b)| b / std_full.col_scale[j])
                .collect();
            let intercept = std_full.y_mean
                - coefficients
                    .iter()
                    .zip(&std_full.col_mean)
                    .map(|(b, m)| b * m)
                    .sum::<f64>();
            LassoPathPoint {
                lambda,
                intercept,
                coefficients,
                l1_norm_standardized: beta_std.iter().map(|b| b.abs()).sum(),
            }
        })
        .collect();

    let chosen = &path[best_idx];
    Ok(LassoFit {
        lambda: chosen.lambda,
        intercept: chosen.intercept,
        column_names: column_names.to_vec(),
        coefficients: chosen.coefficients.clone(),
        path,
        cv_curve,
    })
}

/// Lasso of log duration on the two categoricals plus every schema
/// covariate, mirroring the baseline configuration. Returns the fit and the
/// encoder that maps records onto its columns.
pub fn lasso_fit(
    train: &Dataset,
    lambda_grid: Option<Vec<f64>>,
    cv_folds: usize,
    seed: u64,
) -> Result<(LassoFit, Encoder)> {
    let indices: Vec<usize> = (0..train.len()).collect();
    let extra: Vec<String> = train.schema().names().map(|s| s.to_string()).collect();
    let encoder = Encoder::fit(
        train,
        &indices,
        &extra,
        &[
            (CategoricalField::Surgeon, 1),
            (CategoricalField::OperationType, 1),
        ],
        false,
    )?;
    let design = encoder.encode(train, &indices)?;
    let columns: Vec<Vec<f64>> = (0..design.n_cols()).map(|j| design.column(j)).collect();
    let y: Vec<f64> = train.records().iter().map(|r| r.log_duration).collect();
    let fit = lasso_solve(
        &columns,
        design.column_names(),
        &y,
        lambda_grid,
        cv_folds,
        seed,
    )?;
    Ok((fit, encoder))
}
