//! Command-line pipeline: synthetic generation, covariate screening,
//! selection-rule construction, multi-task fitting, evaluation with reports
//! and figures, and prediction from saved models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use settings::{require, resolve, Settings};
use surgdur::data::{infer_schema, ingest_csv, write_csv, CovariateSchema, Dataset, TaskMode};
use surgdur::evaluation::{emit_report, ReportFormats};
use surgdur::pipeline::{
    run_evaluation, run_fit, run_selection, Baseline, EvalOptions, SelectOptions, DEFAULT_SEED,
};
use surgdur::select::{MultiTaskFit, SelectionRule};
use surgdur::synthetic::{generate_dataset, GeneratorConfig};
use surgdur::{Error, Result};

#[derive(Parser)]
#[command(
    name = "surgdur",
    version,
    about = "Surgery-duration prediction with sample-size-dependent multi-task covariate selection"
)]
struct Cli {
    /// TOML file supplying defaults for any flag (for `generate`, the
    /// generator configuration itself). Explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator configuration.
    Generate {
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional JSON dump of the generating ground truth.
        #[arg(long)]
        truth_out: Option<PathBuf>,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank covariates by correlation with the categorical-model residuals.
    Filter {
        #[arg(long)]
        train: Option<PathBuf>,
        /// How many covariates to keep.
        #[arg(long)]
        k: Option<usize>,
        /// Covariate schema TOML; inferred from the CSV when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        surgeon_min: Option<usize>,
        #[arg(long)]
        optype_min: Option<usize>,
    },
    /// Build the sample-size-indexed covariate selection rule.
    Select {
        #[arg(long)]
        train: Option<PathBuf>,
        /// surgeon | optype | interaction
        #[arg(long)]
        mode: Option<String>,
        /// Output rule JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        grid_min: Option<usize>,
        #[arg(long)]
        grid_max: Option<usize>,
        #[arg(long)]
        surgeon_min: Option<usize>,
        #[arg(long)]
        optype_min: Option<usize>,
        #[arg(long)]
        min_task_size: Option<usize>,
        /// Accepted for pipeline uniformity; selection itself is
        /// deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit per-task models under an existing rule.
    Fit {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Rule JSON from `select`.
        #[arg(long)]
        rule: Option<PathBuf>,
        /// Output model JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        surgeon_min: Option<usize>,
        #[arg(long)]
        optype_min: Option<usize>,
        #[arg(long)]
        min_task_size: Option<usize>,
    },
    /// Full evaluation: select, fit, cross-validate, score the test split,
    /// compare baselines, and write reports and figures.
    Evaluate {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// surgeon | optype | interaction
        #[arg(long)]
        mode: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Comma-separated subset of global,lasso,mi,fs.
        #[arg(long)]
        baselines: Option<String>,
        /// CSV of externally produced predictions
        /// (record_id,predicted_log_duration).
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cross-validation folds.
        #[arg(long)]
        k: Option<usize>,
        /// Cross-validation repetitions per task.
        #[arg(long)]
        reps: Option<usize>,
        /// Cross-validation repetitions for the baselines.
        #[arg(long)]
        baseline_reps: Option<usize>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        surgeon_min: Option<usize>,
        #[arg(long)]
        optype_min: Option<usize>,
        #[arg(long)]
        min_task_size: Option<usize>,
    },
    /// Predict log durations for new records from a saved model.
    Predict {
        /// Model JSON from `fit`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input CSV of records to score.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                _ if err.is_numerical() => 3,
                Error::InvalidArgument(_) | Error::InvalidConfig(_) => 1,
                _ => 2,
            }
        }
    }
}

fn load_schema(schema: Option<&Path>, csv: &Path) -> Result<CovariateSchema> {
    match schema {
        Some(path) => CovariateSchema::from_toml_file(path),
        None => infer_schema(csv),
    }
}

fn load_dataset(path: &Path, schema: Option<&Path>) -> Result<Dataset> {
    let schema = load_schema(schema, path)?;
    ingest_csv(path, &schema)
}

fn parse_mode(mode: &str) -> Result<TaskMode> {
    mode.parse()
}

fn parse_baselines(list: &str) -> Result<Vec<Baseline>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn load_external(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?
        .clone();
    let id_col = headers
        .iter()
        .position(|h| h == "record_id")
        .ok_or_else(|| Error::MissingColumn("record_id".into()))?;
    let pred_col = headers
        .iter()
        .position(|h| h == "predicted_log_duration")
        .ok_or_else(|| Error::MissingColumn("predicted_log_duration".into()))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        let value: f64 = row
            .get(pred_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::CsvData {
                row: i + 1,
                column: "predicted_log_duration".into(),
                message: "not a number".into(),
            })?;
        out.insert(row.get(id_col).unwrap_or("").to_string(), value);
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<()> {
    let config_path = cli.config.clone();
    match cli.command {
        Command::Generate {
            out,
            truth_out,
            seed,
        } => {
            let path = config_path.ok_or_else(|| {
                Error::InvalidArgument("generate requires --config <generator.toml>".into())
            })?;
            let mut config = GeneratorConfig::from_toml_file(&path)?;
            let settings = Settings::load(Some(&path))?;
            if let Some(seed) = seed.or(settings.generate.seed) {
                config.seed = seed;
            }
            let out = require(out, settings.generate.out, "out")?;
            let (dataset, truth) = generate_dataset(&config)?;
            write_csv(&dataset, &out)?;
            println!(
                "wrote {} records over {} tasks to {}",
                dataset.len(),
                truth.tasks.len(),
                out.display()
            );
            if let Some(path) = truth_out.or(settings.generate.truth_out) {
                truth.save_json(&path)?;
                println!("wrote ground truth to {}", path.display());
            }
            Ok(())
        }

        Command::Filter {
            train,
            k,
            schema,
            surgeon_min,
            optype_min,
        } => {
            let settings = Settings::load(config_path.as_deref())?;
            let section = settings.filter;
            let train_path = require(train, section.train, "train")?;
            let k = resolve(k, section.k, 6);
            let dataset = load_dataset(&train_path, schema.or(section.schema).as_deref())?;
            let filtered = surgdur::data::eligibility_filter(
                &dataset,
                resolve(surgeon_min, section.surgeon_min, surgdur::data::DEFAULT_SURGEON_MIN),
                resolve(optype_min, section.optype_min, surgdur::data::DEFAULT_OPTYPE_MIN),
            );
            if filtered.is_empty() {
                return Err(Error::EmptyInput(
                    "no records survive the eligibility thresholds".into(),
                ));
            }
            let ranked = surgdur::filter::residual_filter(&filtered, k)?;
            println!("name,score");
            for r in ranked {
                println!("{},{}", r.name, r.score);
            }
            Ok(())
        }

        Command::Select {
            train,
            mode,
            out,
            schema,
            pool_size,
            grid_min,
            grid_max,
            surgeon_min,
            optype_min,
            min_task_size,
            seed: _,
        } => {
            let settings = Settings::load(config_path.as_deref())?;
            let section = settings.select;
            let train_path = require(train, section.train, "train")?;
            let mode = parse_mode(&require(mode, section.mode, "mode")?)?;
            let out = require(out, section.out, "out")?;
            let dataset = load_dataset(&train_path, schema.or(section.schema).as_deref())?;

            let mut opts = SelectOptions::new(mode);
            opts.pool_size = resolve(pool_size, section.pool_size, opts.pool_size);
            opts.surgeon_min = resolve(surgeon_min, section.surgeon_min, opts.surgeon_min);
            opts.optype_min = resolve(optype_min, section.optype_min, opts.optype_min);
            opts.min_task_size = resolve(min_task_size, section.min_task_size, opts.min_task_size);
            let grid_min = grid_min.or(section.grid_min);
            let grid_max = grid_max.or(section.grid_max);
            if let (Some(lo), Some(hi)) = (grid_min, grid_max) {
                opts.grid = Some((lo, hi));
            }

            let (rule, ranked) = run_selection(&dataset, &opts)?;
            rule.save_json(&out)?;
            println!("screened covariates (by |correlation| with residuals):");
            for r in &ranked {
                println!("  {}  {:.4}", r.name, r.score);
            }
            println!("selection rule ({} ranges) written to {}", rule.ranges.len(), out.display());
            for range in &rule.ranges {
                println!(
                    "  {} <= n <= {}: [{}]",
                    range.n_low,
                    range.n_high,
                    range.subset.join(", ")
                );
            }
            Ok(())
        }

        Command::Fit {
            train,
            rule,
            out,
            schema,
            surgeon_min,
            optype_min,
            min_task_size,
        } => {
            let settings = Settings::load(config_path.as_deref())?;
            let section = settings.fit;
            let train_path = require(train, section.train, "train")?;
            let rule_path = require(rule, section.rule, "rule")?;
            let out = require(out, section.out, "out")?;
            let dataset = load_dataset(&train_path, schema.or(section.schema).as_deref())?;
            let rule = SelectionRule::load_json(&rule_path)?;

            let mut opts = SelectOptions::new(rule.mode);
            opts.surgeon_min = resolve(surgeon_min, section.surgeon_min, opts.surgeon_min);
            opts.optype_min = resolve(optype_min, section.optype_min, opts.optype_min);
            opts.min_task_size = resolve(min_task_size, section.min_task_size, opts.min_task_size);

            let fit = run_fit(&dataset, &rule, &opts)?;
            fit.save_json(&out)?;
            println!(
                "fitted {} tasks in {} mode; model written to {}",
                fit.tasks.len(),
                fit.mode,
                out.display()
            );
            Ok(())
        }

        Command::Evaluate {
            train,
            test,
            mode,
            out,
            schema,
            baselines,
            external,
            seed,
            k,
            reps,
            baseline_reps,
            pool_size,
            surgeon_min,
            optype_min,
            min_task_size,
        } => {
            let settings = Settings::load(config_path.as_deref())?;
            let section = settings.evaluate;
            let train_path = require(train, section.train, "train")?;
            let test_path = require(test, section.test, "test")?;
            let mode = parse_mode(&require(mode, section.mode, "mode")?)?;
            let out = require(out, section.out, "out")?;
            let schema_path = schema.or(section.schema);
            let schema = load_schema(schema_path.as_deref(), &train_path)?;
            let train = ingest_csv(&train_path, &schema)?;
            let test = ingest_csv(&test_path, &schema)?;

            let mut opts = EvalOptions::new(mode);
            opts.seed = resolve(seed, section.seed, DEFAULT_SEED);
            opts.k = resolve(k, section.k, opts.k);
            opts.reps = resolve(reps, section.reps, opts.reps);
            opts.baseline_reps = resolve(baseline_reps, section.baseline_reps, opts.baseline_reps);
            opts.select.pool_size = resolve(pool_size, section.pool_size, opts.select.pool_size);
            opts.select.surgeon_min =
                resolve(surgeon_min, section.surgeon_min, opts.select.surgeon_min);
            opts.select.optype_min = resolve(optype_min, section.optype_min, opts.select.optype_min);
            opts.select.min_task_size =
                resolve(min_task_size, section.min_task_size, opts.select.min_task_size);
            if let Some(list) = baselines.or(section.baselines) {
                opts.baselines = parse_baselines(&list)?;
            }
            if let Some(path) = external.or(section.external) {
                opts.external = Some(load_external(&path)?);
            }

            let report = run_evaluation(&train, &test, &opts)?;
            for flag in &report.drift_flags {
                eprintln!(
                    "warning: covariate `{}` drifts between train and test (smd = {:.2})",
                    flag.name, flag.smd
                );
            }
            let written = emit_report(&report, &out, ReportFormats::default())?;
            println!("method,train_cv_rmse_pct,test_rmse_pct,n_tasks,n_test_obs");
            for m in &report.methods {
                println!(
                    "{},{},{},{},{}",
                    m.method,
                    m.train_cv_rmse_pct.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    m.test_rmse_pct.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    m.n_tasks,
                    m.n_test_obs
                );
            }
            println!("wrote {} files to {}", written.len(), out.display());
            Ok(())
        }

        Command::Predict { model, input, out } => {
            let settings = Settings::load(config_path.as_deref())?;
            let section = settings.predict;
            let model_path = require(model, section.model, "model")?;
            let input_path = require(input, section.input, "in")?;
            let out = require(out, section.out, "out")?;

            let fit = MultiTaskFit::load_json(&model_path)?;
            let dataset = ingest_csv(&input_path, &fit.schema)?;
            let mut writer = csv::Writer::from_path(&out).map_err(|e| Error::Format {
                path: out.clone(),
                message: e.to_string(),
            })?;
            writer
                .write_record([
                    "record_id",
                    "predicted_log_duration",
                    "predicted_minutes",
                    "fallback",
                ])
                .map_err(|e| Error::Format {
                    path: out.clone(),
                    message: e.to_string(),
                })?;
            let mut fallbacks = 0usize;
            for rec in dataset.records() {
                let pred = fit.predict(rec)?;
                if pred.fallback {
                    fallbacks += 1;
                }
                writer
                    .write_record([
                        rec.record_id.clone(),
                        pred.log_duration.to_string(),
                        pred.log_duration.exp().to_string(),
                        if pred.fallback { "1" } else { "0" }.to_string(),
                    ])
                    .map_err(|e| Error::Format {
                        path: out.clone(),
                        message: e.to_string(),
                    })?;
            }
            writer.flush().map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            println!(
                "scored {} records ({} fallback) into {}",
                dataset.len(),
                fallbacks,
                out.display()
            );
            Ok(())
        }
    }
}
