//! Comparison models: the single global regression, greedy forward
//! selection, and the lasso with cross-validated regularization strength.

mod lasso;

pub use lasso::{lasso_fit, lasso_solve, LassoFit, LassoPathPoint};

use serde::{Deserialize, Serialize};

use crate::data::{CategoricalField, CovariateSchema, Dataset, Encoder, SurgeryRecord};
use crate::error::{Error, Result};
use crate::ols::{fit_ols, OlsFit};

/// Forward selection keeps at most this many covariates by default.
pub const DEFAULT_FS_MAX_K: usize = 200;

/// Slim, serializable linear model: named columns and their coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub dropped_columns: Vec<String>,
}

impl LinearPredictor {
    pub fn from_fit(fit: &OlsFit) -> Self {
        LinearPredictor {
            column_names: fit.column_names.clone(),
            coefficients: fit.coefficients.clone(),
            dropped_columns: fit.dropped_columns.clone(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

/// The single regression over the whole training set: intercept, surgeon and
/// operation-type indicators, plus the extra covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalModel {
    pub encoder: Encoder,
    pub predictor: LinearPredictor,
    pub r_squared: f64,
    pub sigma2_hat: Option<f64>,
    pub n_train: usize,
}

impl GlobalModel {
    pub fn predict(&self, schema: &CovariateSchema, rec: &SurgeryRecord) -> Result<f64> {
        let row = self.encoder.encode_row(schema, rec)?;
        Ok(self.predictor.predict_row(&row))
    }
}

/// Fits the global model of log duration on all training records.
pub fn fit_global(train: &Dataset, extra_covariates: &[String]) -> Result<(GlobalModel, OlsFit)> {
    let indices: Vec<usize> = (0..train.len()).collect();
    let encoder = Encoder::fit(
        train,
        &indices,
        extra_covariates,
        &[
            (CategoricalField::Surgeon, 1),
            (CategoricalField::OperationType, 1),
        ],
        true,
    )?;
    let design = encoder.encode(train, &indices)?;
    let y: Vec<f64> = train.records().iter().map(|r| r.log_duration).collect();
    let fit = fit_ols(&design, &y)?;
    let model = GlobalModel {
        encoder,
        predictor: LinearPredictor::from_fit(&fit),
        r_squared: fit.r_squared,
        sigma2_hat: fit.sigma2_hat,
        n_train: train.len(),
    };
    Ok((model, fit))
}

/// Greedy forward selection: starting from intercept plus the two
/// categoricals, repeatedly add the pool covariate with the largest RSS
/// decrease. Ties break lexicographically; stops after `max_k` additions.
pub fn forward_select(train: &Dataset, pool: &[String], max_k: usize) -> Result<Vec<String>> {
    if max_k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "max_k = {max_k} exceeds the pool of {}",
            pool.len()
        )));
    }
    let indices: Vec<usize> = (0..train.len()).collect();
    let y: Vec<f64> = train.records().iter().map(|r| r.log_duration).collect();
    let cats = [
        (CategoricalField::Surgeon, 1),
        (CategoricalField::OperationType, 1),
    ];
    let rss_of = |subset: &[String]| -> Result<f64> {
        let encoder = Encoder::fit(train, &indices, subset, &cats, true)?;
        let design = encoder.encode(train, &indices)?;
        Ok(fit_ols(&design, &y)?.rss)
    };

    let mut remaining: Vec<String> = pool.to_vec();
    remaining.sort();
    remaining.dedup();
    let mut selected: Vec<String> = Vec::new();

    for _ in 0..max_k {
        if remaining.is_empty() {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, candidate) in remaining.iter().enumerate() {
            let mut trial = selected.clone();
            trial.push(candidate.clone());
            let rss = rss_of(&trial)?;
            // Strict improvement keeps the lexicographically first candidate
            // on exact ties.
            if best.map(|(b, _)| rss < b).unwrap_or(true) {
                best = Some((rss, i));
            }
        }
        let (_, idx) = best.unwrap();
        selected.push(remaining.remove(idx));
    }
    Ok(selected)
}
