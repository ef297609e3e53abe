//! First-stage univariate screening: residual-correlation ranking, a
//! mutual-information ranking, and train/test covariate drift checks.

use serde::{Deserialize, Serialize};

use crate::data::{CategoricalField, CovariateKind, Dataset, Encoder};
use crate::error::{Error, Result};
use crate::ols::fit_ols;
use crate::stats;

/// Number of covariates the mutual-information and forward-selection
/// baselines keep by default.
pub const DEFAULT_MI_K: usize = 200;
/// Default bin count for the mutual-information estimator.
pub const DEFAULT_MI_BINS: usize = 10;
/// Default standardized-mean-difference threshold for drift flags.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.5;

/// A covariate with its screening score, ordered best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCovariate {
    pub name: String,
    pub score: f64,
}

/// Ranks schema covariates by the absolute Pearson correlation with the
/// residuals of a regression of log duration on the two categoricals
/// (surgeon and operation type) alone. Returns the top `k`, ties broken by
/// name. A zero-variance covariate scores 0.
pub fn residual_filter(train: &Dataset, k: usize) -> Result<Vec<RankedCovariate>> {
    if train.is_empty() {
        return Err(Error::EmptyInput("residual filter needs training data".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let indices: Vec<usize> = (0..train.len()).collect();
    let encoder = Encoder::fit(
        train,
        &indices,
        &[],
        &[
            (CategoricalField::Surgeon, 1),
            (CategoricalField::OperationType, 1),
        ],
        true,
    )?;
    let design = encoder.encode(train, &indices)?;
    let y: Vec<f64> = train.records().iter().map(|r| r.log_duration).collect();
    let fit = fit_ols(&design, &y)?;

    let mut ranked: Vec<RankedCovariate> = train
        .schema()
        .names()
        .map(|name| {
            let column = train.covariate_column(&indices, name).unwrap();
            let score = stats::pearson(&column, &fit.residuals).abs();
            RankedCovariate {
                name: name.to_string(),
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.name.cmp(&b.name)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Equal-frequency bin assignment. Ties always land in the same bin, so a
/// constant column collapses to a single cell.
fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins)
        .map(|i| stats::quantile_sorted(&sorted, i as f64 / bins as f64))
        .collect();
    values
        .iter()
        .map(|v| edges.iter().filter(|e| v > e).count())
        .collect()
}

fn plug_in_mi(x_cells: &[usize], y_cells: &[usize], x_card: usize, y_card: usize) -> f64 {
    let n = x_cells.len() as f64;
    let mut joint = vec![0.0f64; x_card * y_card];
    let mut px = vec![0.0f64; x_card];
    let mut py = vec![0.0f64; y_card];
    for (&a, &b) in x_cells.iter().zip(y_cells) {
        joint[a * y_card + b] += 1.0;
        px[a] += 1.0;
        py[b] += 1.0;
    }
    let mut mi = 0.0;
    for a in 0..x_card {
        for b in 0..y_card {
            let pab = joint[a * y_card + b] / n;
            if pab > 0.0 {
                mi += pab * (pab / (px[a] / n * py[b] / n)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Ranks covariates by plug-in mutual information (natural-log units) with
/// log duration. Continuous and count covariates are discretized into
/// equal-frequency bins; indicators are used as-is.
pub fn mutual_information_rank(
    train: &Dataset,
    k: usize,
    bins: usize,
) -> Result<Vec<RankedCovariate>> {
    if train.is_empty() {
        return Err(Error::EmptyInput("MI ranking needs training data".into()));
    }
    if k > train.schema().len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} covariates in the schema",
            train.schema().len()
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("bins must be at least 2".into()));
    }
    let indices: Vec<usize> = (0..train.len()).collect();
    let y: Vec<f64> = train.records().iter().map(|r| r.log_duration).collect();
    let y_cells = equal_frequency_bins(&y, bins);

    let mut ranked: Vec<RankedCovariate> = train
        .schema()
        .entries()
        .iter()
        .map(|(name, kind)| {
            let column = train.covariate_column(&indices, name).unwrap();
            let (cells, card) = match kind {
                CovariateKind::Indicator => {
                    let cells: Vec<usize> =
                        column.iter().map(|&v| if v != 0.0 { 1 } else { 0 }).collect();
                    (cells, 2)
                }
                _ => (equal_frequency_bins(&column, bins), bins),
            };
            RankedCovariate {
                name: name.clone(),
                score: plug_in_mi(&cells, &y_cells, card, bins),
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.name.cmp(&b.name)));
    ranked.truncate(k);
    Ok(ranked)
}

/// A covariate whose train/test standardized mean difference crossed the
/// screening threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFlag {
    pub name: String,
    /// |mean_train - mean_test| / pooled standard deviation.
    pub smd: f64,
}

/// Screens each covariate for a train/test location shift. Returns the
/// covariates whose standardized mean difference exceeds `threshold`, worst
/// first. A zero pooled standard deviation flags unconditionally when the
/// means differ.
pub fn drift_screen(train: &Dataset, test: &Dataset, threshold: f64) -> Result<Vec<DriftFlag>> {
    if train.schema() != test.schema() {
        return Err(Error::InvalidArgument(
            "train and test schemas differ".into(),
        ));
    }
    if train.is_empty() || test.is_empty() {
        return Ok(Vec::new());
    }
    let train_idx: Vec<usize> = (0..train.len()).collect();
    let test_idx: Vec<usize> = (0..test.len()).collect();
    let mut flags = Vec::new();
    for name in train.schema().names() {
        let a = train.covariate_column(&train_idx, name)?;
        let b = test.covariate_column(&test_idx, name)?;
        let diff = (stats::mean(&a) - stats::mean(&b)).abs();
        let pooled = (((a.len() - 1) as f64 * stats::sample_variance(&a)
            + (b.len() - 1) as f64 * stats::sample_variance(&b))
            / (a.len() + b.len() - 2) as f64)
            .sqrt();
        let smd = if pooled > 0.0 {
            diff / pooled
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if smd > threshold {
            flags.push(DriftFlag {
                name: name.to_string(),
                smd,
            });
        }
    }
    flags.sort_by(|a, b| b.smd.total_cmp(&a.smd).then(a.name.cmp(&b.name)));
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::tiny_schema;
    use crate::data::{CovariateSchema, Dataset, SurgeryRecord};
    use chrono::NaiveDate;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_schema(n_noise: usize) -> CovariateSchema {
        let mut entries = vec![("signal".to_string(), CovariateKind::Continuous)];
        for i in 0..n_noise {
            entries.push((format!("noise_{i:02}"), CovariateKind::Continuous));
        }
        CovariateSchema::new(entries).unwrap()
    }

    /// Two surgeons, two types, log duration driven by the group means plus
    /// a planted residual-correlated covariate.
    fn planted_dataset(seed: u64, n: usize, n_noise: usize, beta: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = noise_schema(n_noise);
        let records = (0..n)
            .map(|i| {
                let surgeon = format!("S{}", i % 2);
                let optype = format!("T{}", (i / 2) % 2);
                let group_effect = if surgeon == "S0" { 4.0 } else { 4.4 }
                    + if optype == "T0" { 0.0 } else { 0.5 };
                let signal: f64 = rng.random_range(-1.0..1.0);
                let mut covs = vec![signal];
                for _ in 0..n_noise {
                    covs.push(rng.random_range(-1.0..1.0));
                }
                let log_duration = group_effect + beta * signal + 0.1 * rng.random_range(-1.0..1.0);
                SurgeryRecord {
                    record_id: format!("R{i:05}"),
                    surgeon_id: surgeon,
                    operation_type_id: optype,
                    duration_minutes: log_duration.exp(),
                    log_duration,
                    date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                    covariates: covs,
                }
            })
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    #[test]
    fn residual_filter_finds_a_perfectly_correlated_covariate() {
        // Build data, fit the categorical-only model, then plant a covariate
        // exactly equal to its residuals. It must rank first with score 1.
        let base = planted_dataset(1, 200, 3, 0.4);
        let indices: Vec<usize> = (0..base.len()).collect();
        let encoder = Encoder::fit(
            &base,
            &indices,
            &[],
            &[
                (CategoricalField::Surgeon, 1),
                (CategoricalField::OperationType, 1),
            ],
            true,
        )
        .unwrap();
        let design = encoder.encode(&base, &indices).unwrap();
        let y: Vec<f64> = base.records().iter().map(|r| r.log_duration).collect();
        let fit = fit_ols(&design, &y).unwrap();

        let mut entries = base.schema().entries().to_vec();
        entries.push(("resid_copy".into(), CovariateKind::Continuous));
        let schema = CovariateSchema::new(entries).unwrap();
        let records: Vec<SurgeryRecord> = base
            .records()
            .iter()
            .zip(&fit.residuals)
            .map(|(r, &e)| {
                let mut rec = r.clone();
                rec.covariates.push(e);
                rec
            })
            .collect();
        let ds = Dataset::new(schema, records).unwrap();

        let ranked = residual_filter(&ds, 3).unwrap();
        assert_eq!(ranked[0].name, "resid_copy");
        assert!((ranked[0].score - 1.0).abs() < 1e-8);
    }

    #[test]
    fn residual_filter_recovers_planted_covariate_across_seeds() {
        let mut hits = 0;
        for seed in 0..100 {
            let ds = planted_dataset(seed, 150, 20, 0.5);
            let ranked = residual_filter(&ds, 1).unwrap();
            if ranked[0].name == "signal" {
                hits += 1;
            }
        }
        assert!(hits >= 95, "planted covariate ranked first in {hits}/100 seeds");
    }

    #[test]
    fn residual_filter_is_invariant_to_affine_rescaling() {
        let ds = planted_dataset(7, 120, 4, 0.3);
        let ranked = residual_filter(&ds, 5).unwrap();

        let records: Vec<SurgeryRecord> = ds
            .records()
            .iter()
            .map(|r| {
                let mut rec = r.clone();
                rec.covariates[0] = 100.0 * rec.covariates[0] - 7.0;
                rec
            })
            .collect();
        let scaled = Dataset::new(ds.schema().clone(), records).unwrap();
        let ranked_scaled = residual_filter(&scaled, 5).unwrap();
        for (a, b) in ranked.iter().zip(&ranked_scaled) {
            assert_eq!(a.name, b.name);
            assert!((a.score - b.score).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_covariate_scores_zero_everywhere() {
        let mut ds = planted_dataset(3, 80, 2, 0.4);
        let records: Vec<SurgeryRecord> = ds
            .records()
            .iter()
            .map(|r| {
                let mut rec = r.clone();
                rec.covariates[1] = 5.0;
                rec
            })
            .collect();
        ds = Dataset::new(ds.schema().clone(), records).unwrap();
        let pearson_ranked = residual_filter(&ds, ds.schema().len()).unwrap();
        let noise0 = pearson_ranked.iter().find(|r| r.name == "noise_00").unwrap();
        assert_eq!(noise0.score, 0.0);
        let mi_ranked = mutual_information_rank(&ds, ds.schema().len(), 10).unwrap();
        let noise0 = mi_ranked.iter().find(|r| r.name == "noise_00").unwrap();
        assert_eq!(noise0.score, 0.0);
        assert!(mi_ranked.iter().all(|r| r.score >= 0.0));
    }

    #[test]
    fn mutual_information_of_matching_binary_is_ln_two() {
        // X equals an indicator of the two-valued response; n = 10,000.
        let schema =
            CovariateSchema::new(vec![("x".into(), CovariateKind::Indicator)]).unwrap();
        let records: Vec<SurgeryRecord> = (0..10_000)
            .map(|i| {
                let high = i % 2 == 0;
                let log_duration: f64 = if high { 5.0 } else { 3.0 };
                SurgeryRecord {
                    record_id: format!("R{i}"),
                    surgeon_id: "S1".into(),
                    operation_type_id: "T1".into(),
                    duration_minutes: log_duration.exp(),
                    log_duration,
                    date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                    covariates: vec![if high { 1.0 } else { 0.0 }],
                }
            })
            .collect();
        let ds = Dataset::new(schema, records).unwrap();
        let ranked = mutual_information_rank(&ds, 1, 10).unwrap();
        // Oracle: plug-in formula on the exact 2x2 joint, diag(1/2, 1/2).
        let oracle = 0.5 * (0.5f64 / (0.5 * 0.5)).ln() + 0.5 * (0.5f64 / (0.5 * 0.5)).ln();
        assert!((oracle - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((ranked[0].score - oracle).abs() < 0.01);
    }

    #[test]
    fn mi_default_matches_baseline_configuration() {
        assert_eq!(DEFAULT_MI_K, 200);
        assert_eq!(DEFAULT_MI_BINS, 10);
    }

    #[test]
    fn rankings_are_deterministic() {
        let ds = planted_dataset(11, 100, 6, 0.3);
        assert_eq!(residual_filter(&ds, 4).unwrap(), residual_filter(&ds, 4).unwrap());
        assert_eq!(
            mutual_information_rank(&ds, 4, 10).unwrap(),
            mutual_information_rank(&ds, 4, 10).unwrap()
        );
    }

    #[test]
    fn drift_screen_ignores_identical_splits() {
        let ds = planted_dataset(5, 60, 2, 0.3);
        let flags = drift_screen(&ds, &ds, DEFAULT_DRIFT_THRESHOLD).unwrap();
        assert!(flags.is_empty());
    }

    #[test]
    fn drift_screen_flags_a_two_sd_shift() {
        let train = planted_dataset(5, 200, 2, 0.3);
        // Shift `signal` (std roughly 0.58 for U(-1,1)) by two pooled sds.
        let sd = train
            .covariate_column(&(0..train.len()).collect::<Vec<_>>(), "signal")
            .map(|c| stats::sample_variance(&c).sqrt())
            .unwrap();
        let records: Vec<SurgeryRecord> = train
            .records()
            .iter()
            .map(|r| {
                let mut rec = r.clone();
                rec.record_id = format!("test_{}", rec.record_id);
                rec.covariates[0] += 2.0 * sd;
                rec
            })
            .collect();
        let test = Dataset::new(train.schema().clone(), records).unwrap();
        let flags = drift_screen(&train, &test, 0.5).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].name, "signal");
        assert!(flags[0].smd > 1.5);
    }

    #[test]
    fn drift_screen_matches_moment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let make = |rng: &mut ChaCha8Rng, shift: f64, n: usize, tag: &str| {
            let records: Vec<SurgeryRecord> = (0..n)
                .map(|i| SurgeryRecord {
                    record_id: format!("{tag}{i}"),
                    surgeon_id: "S1".into(),
                    operation_type_id: "T1".into(),
                    duration_minutes: 60.0,
                    log_duration: 60.0f64.ln(),
                    date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                    covariates: vec![rng.random_range(-1.0..1.0) + shift, rng.random_range(0..2) as f64],
                })
                .collect();
            Dataset::new(tiny_schema(), records).unwrap()
        };
        let train = make(&mut rng, 0.0, 300, "tr");
        let test = make(&mut rng, 0.4, 200, "te");
        let flags = drift_screen(&train, &test, 0.5).unwrap();

        // Independent two-pass mean/variance oracle.
        let oracle = |name: &str| -> f64 {
            let a = train
                .covariate_column(&(0..train.len()).collect::<Vec<_>>(), name)
                .unwrap();
            let b = test
                .covariate_column(&(0..test.len()).collect::<Vec<_>>(), name)
                .unwrap();
            let (ma, mb) = (stats::mean(&a), stats::mean(&b));
            let va = a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / (a.len() - 1) as f64;
            let vb = b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / (b.len() - 1) as f64;
            let pooled = (((a.len() - 1) as f64 * va + (b.len() - 1) as f64 * vb)
                / (a.len() + b.len() - 2) as f64)
                .sqrt();
            (ma - mb).abs() / pooled
        };
        for name in ["age", "flag"] {
            let smd = oracle(name);
            let flagged = flags.iter().any(|f| f.name == name);
            assert_eq!(flagged, smd > 0.5, "{name}: smd {smd}");
            if let Some(f) = flags.iter().find(|f| f.name == name) {
                assert!((f.smd - smd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drift_zero_pooled_std_flags_only_when_means_differ() {
        let make = |value: f64, tag: &str| {
            let records: Vec<SurgeryRecord> = (0..10)
                .map(|i| SurgeryRecord {
                    record_id: format!("{tag}{i}"),
                    surgeon_id: "S1".into(),
                    operation_type_id: "T1".into(),
                    duration_minutes: 60.0,
                    log_duration: 60.0f64.ln(),
                    date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                    covariates: vec![value, 0.0],
                })
                .collect();
            Dataset::new(tiny_schema(), records).unwrap()
        };
        let train = make(2.0, "tr");
        let same = make(2.0, "te");
        assert!(drift_screen(&train, &same, 0.5).unwrap().is_empty());
        let shifted = make(3.0, "te");
        let flags = drift_screen(&train, &shifted, 0.5).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].name, "age");
        assert!(flags[0].smd.is_infinite());
    }
}
