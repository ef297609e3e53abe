//! Ordinary least squares on dense design matrices.
//!
//! Fitting goes through a Householder QR decomposition processed in column
//! order: a column whose remaining norm after orthogonalization against the
//! already-retained columns falls below the rank tolerance is dropped, so on
//! collinear designs the first occurrence of a direction wins and later
//! duplicates are recorded in `dropped_columns`. The rank tolerance is
//! `max(n, d) * machine epsilon * largest original column norm`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense design matrix: rows are observations, columns are named covariates.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Array2<f64>,
    column_names: Vec<String>,
    includes_intercept: bool,
}

impl DesignMatrix {
    pub fn new(
        values: Array2<f64>,
        column_names: Vec<String>,
        includes_intercept: bool,
    ) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::EmptyInput("design matrix has zero rows".into()));
        }
        if values.ncols() == 0 {
            return Err(Error::EmptyInput("design matrix has zero columns".into()));
        }
        if column_names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        for (i, a) in column_names.iter().enumerate() {
            if column_names[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate column name `{a}`"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix entry".into()));
        }
        Ok(DesignMatrix {
            values,
            column_names,
            includes_intercept,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn includes_intercept(&self) -> bool {
        self.includes_intercept
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }
}

/// A fitted least-squares model.
///
/// `coefficients` has one entry per design column; dropped columns carry an
/// exact zero. `sigma2_hat` is `rss / (n - rank)` and is absent when the fit
/// has no residual degrees of freedom.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub column_names: Vec<String>,
    pub includes_intercept: bool,
    pub coefficients: Vec<f64>,
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub sigma2_hat: Option<f64>,
    pub r_squared: f64,
    pub effective_rank: usize,
    pub dropped_columns: Vec<String>,
}

impl OlsFit {
    pub fn n_obs(&self) -> usize {
        self.fitted_values.len()
    }

    /// Predicts responses for new rows. Column names must match the fitted
    /// design exactly (same names, same order); dropped columns contribute
    /// zero through their zero coefficient.
    pub fn predict(&self, x_new: &DesignMatrix) -> Result<Vec<f64>> {
        if x_new.column_names() != self.column_names.as_slice() {
            return Err(Error::ColumnMismatch(format!(
                "expected [{}], got [{}]",
                self.column_names.join(", "),
                x_new.column_names().join(", ")
            )));
        }
        Ok(x_new
            .values()
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(&self.coefficients)
                    .map(|(x, b)| x * b)
                    .sum()
            })
            .collect())
    }
}

/// Householder QR with in-order rank detection.
pub(crate) struct Qr {
    n: usize,
    /// (row offset, reflector vector v, 2 / v'v)
    reflectors: Vec<(usize, Vec<f64>, f64)>,
    /// rank x rank upper triangle over the retained columns.
    r: Array2<f64>,
    retained: Vec<usize>,
    dropped: Vec<usize>,
}

impl Qr {
    pub(crate) fn decompose(x: &DesignMatrix) -> Qr {
        let n = x.n_rows();
        let d = x.n_cols();
        let mut a = x.values().clone();

        let max_col_norm = (0..d)
            .map(|j| a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let tol = (n.max(d)) as f64 * f64::EPSILON * max_col_norm;

        let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::new();
        let mut retained = Vec::new();
        let mut dropped = Vec::new();
        let mut rank = 0usize;

        for j in 0..d {
            if rank == n {
                dropped.push(j);
                continue;
            }
            let tail_norm = (rank..n).map(|i| a[[i, j]] * a[[i, j]]).sum::<f64>().sqrt();
            if tail_norm <= tol {
                dropped.push(j);
                continue;
            }
            let alpha = a[[rank, j]];
            let beta = if alpha >= 0.0 { -tail_norm } else { tail_norm };
            let mut v = vec![0.0; n - rank];
            v[0] = alpha - beta;
            for i in 1..n - rank {
                v[i] = a[[rank + i, j]];
            }
            let vtv: f64 = v.iter().map(|t| t * t).sum();
            let tau = 2.0 / vtv;
            // Apply the reflector to the trailing columns (including j).
            for c in j..d {
                let w: f64 = tau * (0..n - rank).map(|i| v[i] * a[[rank + i, c]]).sum::<f64>();
                for i in 0..n - rank {
                    a[[rank + i, c]] -= w * v[i];
                }
            }
            a[[rank, j]] = beta;
            for i in rank + 1..n {
                a[[i, j]] = 0.0;
            }
            reflectors.push((rank, v, tau));
            retained.push(j);
            rank += 1;
        }

        let mut r = Array2::zeros((rank, rank));
        for (k, &col) in retained.iter().enumerate() {
            for i in 0..=k {
                r[[i, k]] = a[[i, col]];
            }
        }

        Qr {
            n,
            reflectors,
            r,
            retained,
            dropped,
        }
    }

    pub(crate) fn rank(&self) -> usize {
        self.retained.len()
    }

    /// Applies Q' in place.
    fn apply_qt(&self, v: &mut [f64]) {
        for (offset, refl, tau) in &self.reflectors {
            let m = refl.len();
            let w: f64 = tau * (0..m).map(|i| refl[i] * v[offset + i]).sum::<f64>();
            for i in 0..m {
                v[offset + i] -= w * refl[i];
            }
        }
    }

    /// Applies Q in place.
    fn apply_q(&self, v: &mut [f64]) {
        for (offset, refl, tau) in self.reflectors.iter().rev() {
            let m = refl.len();
            let w: f64 = tau * (0..m).map(|i| refl[i] * v[offset + i]).sum::<f64>();
            for i in 0..m {
                v[offset + i] -= w * refl[i];
            }
        }
    }

    /// Back substitution on R beta = z.
    #[allow(clippy::needless_range_loop)]
    fn solve_r(&self, z: &[f64]) -> Vec<f64> {
        let rank = self.rank();
        let mut beta = vec![0.0; rank];
        for k in (0..rank).rev() {
            let mut s = z[k];
            for c in k + 1..rank {
                s -= self.r[[k, c]] * beta[c];
            }
            beta[k] = s / self.r[[k, k]];
        }
        beta
    }

    /// Diagonal of the projection matrix onto the retained column space.
    pub(crate) fn leverages(&self) -> Vec<f64> {
        let rank = self.rank();
        let mut h = vec![0.0; self.n];
        for k in 0..rank {
            let mut q = vec![0.0; self.n];
            q[k] = 1.0;
            self.apply_q(&mut q);
            for i in 0..self.n {
                h[i] += q[i] * q[i];
            }
        }
        h
    }
}

/// Fits ordinary least squares of `y` on the columns of `x`.
///
/// Rank-deficient columns are dropped deterministically (first occurrence of
/// a direction wins) and listed in `dropped_columns` of the result.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response entry".into()));
    }

    let qr = Qr::decompose(x);
    let rank = qr.rank();

    let mut z = y.to_vec();
    qr.apply_qt(&mut z);
    let beta = qr.solve_r(&z[..rank]);

    // fitted = Q [z_1; 0]
    let mut fitted = vec![0.0; n];
    fitted[..rank].copy_from_slice(&z[..rank]);
    qr.apply_q(&mut fitted);

    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();

    let mut coefficients = vec![0.0; x.n_cols()];
    for (k, &col) in qr.retained.iter().enumerate() {
        coefficients[col] = beta[k];
    }
    let dropped_columns: Vec<String> = qr
        .dropped
        .iter()
        .map(|&j| x.column_names()[j].clone())
        .collect();

    let sigma2_hat = if n > rank {
        Some(rss / (n - rank) as f64)
    } else {
        None
    };

    let tss = if x.includes_intercept() {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else if rss <= f64::EPSILON * n as f64 {
        1.0
    } else {
        0.0
    };

    Ok(OlsFit {
        column_names: x.column_names().to_vec(),
        includes_intercept: x.includes_intercept(),
        coefficients,
        fitted_values: fitted,
        residuals,
        rss,
        sigma2_hat,
        r_squared,
        effective_rank: rank,
        dropped_columns,
    })
}

/// Leave-one-out prediction residuals `e_i / (1 - h_ii)` from the closed form.
///
/// `fit` must come from `fit_ols(x, ..)` on the same design. Errors when a
/// leverage is within 1e-10 of one (the observation interpolates itself).
pub fn loo_residuals(fit: &OlsFit, x: &DesignMatrix) -> Result<Vec<f64>> {
    if x.column_names() != fit.column_names.as_slice() {
        return Err(Error::ColumnMismatch(
            "leave-one-out design differs from the fitted design".into(),
        ));
    }
    if x.n_rows() != fit.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows for a fit over {} observations",
            x.n_rows(),
            fit.n_obs()
        )));
    }
    let qr = Qr::decompose(x);
    let h = qr.leverages();
    let mut out = Vec::with_capacity(x.n_rows());
    for (i, (&e, &hi)) in fit.residuals.iter().zip(&h).enumerate() {
        if hi >= 1.0 - 1e-10 {
            return Err(Error::LeverageAtOne(i));
        }
        out.push(e / (1.0 - hi));
    }
    Ok(out)
}
