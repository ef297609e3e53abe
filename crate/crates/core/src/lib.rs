//! Multi-task linear regression with sample-size-dependent covariate
//! selection, built for surgery-duration prediction.
//!
//! The training data is split into regression tasks (one per surgeon, per
//! operation type, or per surgeon/operation-type pair). All tasks with the
//! same sample size share one covariate subset — chosen by minimizing a
//! generalization of Mallows's Cp over an exhaustive subset search — while
//! every task keeps its own coefficients. The crate ships the supporting
//! pipeline: CSV ingestion and temporal splitting, univariate screening,
//! baselines (global regression, forward selection, lasso), a repeated
//! k-fold evaluation harness with report and figure emission, and a
//! synthetic-data generator with a Monte Carlo risk oracle used to validate
//! the selection statistic.
//!
//! Typical flow:
//!
//! ```no_run
//! use surgdur::data::TaskMode;
//! use surgdur::pipeline::{run_evaluation, EvalOptions};
//!
//! # fn main() -> surgdur::Result<()> {
//! let schema = surgdur::data::infer_schema("train.csv".as_ref())?;
//! let train = surgdur::data::ingest_csv("train.csv".as_ref(), &schema)?;
//! let test = surgdur::data::ingest_csv("test.csv".as_ref(), &schema)?;
//! let report = run_evaluation(&train, &test, &EvalOptions::new(TaskMode::Surgeon))?;
//! surgdur::evaluation::emit_report(&report, "out".as_ref(), Default::default())?;
//! # Ok(())
//! # }
//! ```

pub mod baselines;
pub mod data;
mod error;
pub mod evaluation;
pub mod filter;
pub mod ols;
pub mod pipeline;
pub mod reference;
pub mod select;
mod stats;
pub mod synthetic;

pub use error::{Error, Result};
