//! Dataset representation and preparation: CSV ingestion, the log transform,
//! temporal train/test splitting, eligibility filtering, task partitioning,
//! per-operation-type response centering, and design-matrix encoding.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::DesignMatrix;

/// Declared kind of a numeric covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Count,
    Continuous,
    Indicator,
}

impl FromStr for CovariateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(CovariateKind::Count),
            "continuous" => Ok(CovariateKind::Continuous),
            "indicator" => Ok(CovariateKind::Indicator),
            other => Err(Error::InvalidConfig(format!(
                "unknown covariate kind `{other}` (expected count, continuous or indicator)"
            ))),
        }
    }
}

/// Ordered covariate names with their kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    entries: Vec<(String, CovariateKind)>,
}

impl CovariateSchema {
    pub fn new(entries: Vec<(String, CovariateKind)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[i + 1..].iter().any(|(other, _)| other == name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate covariate `{name}` in schema"
                )));
            }
        }
        Ok(CovariateSchema { entries })
    }

    /// The six-covariate reference schema used throughout the pipeline
    /// defaults: patient age, anesthesiologist count, three diagnosis
    /// indicators, and the lead surgeon's past-surgery count.
    pub fn reference() -> Self {
        CovariateSchema {
            entries: vec![
                ("age".into(), CovariateKind::Continuous),
                ("n_anesthesiologists".into(), CovariateKind::Count),
                ("hypertension".into(), CovariateKind::Indicator),
                ("ot_compl_bir".into(), CovariateKind::Indicator),
                ("diabetes_mellitus".into(), CovariateKind::Indicator),
                ("surgeon_experience".into(), CovariateKind::Count),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, CovariateKind)] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<CovariateKind> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, k)| *k)
    }

    /// Loads a schema from a TOML file with a `[covariates]` table mapping
    /// each covariate name to its kind. Order in the file is preserved.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: toml::Value = text
            .parse()
            .map_err(|e| Error::format(path, format!("{e}")))?;
        let table = doc
            .get("covariates")
            .and_then(|v| v.as_table())
            .ok_or_else(|| Error::format(path, "missing [covariates] table"))?;
        let mut entries = Vec::new();
        for (name, kind) in table {
            let kind = kind
                .as_str()
                .ok_or_else(|| Error::format(path, format!("covariate `{name}` kind must be a string")))?;
            entries.push((name.clone(), kind.parse()?));
        }
        CovariateSchema::new(entries)
    }
}

/// One surgery observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryRecord {
    pub record_id: String,
    pub surgeon_id: String,
    pub operation_type_id: String,
    pub duration_minutes: f64,
    /// Natural log of `duration_minutes`.
    pub log_duration: f64,
    pub date: NaiveDate,
    /// Covariate values aligned with the dataset schema order.
    pub covariates: Vec<f64>,
}

/// A schema plus its conforming records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    schema: CovariateSchema,
    records: Vec<SurgeryRecord>,
}

impl Dataset {
    pub fn new(schema: CovariateSchema, records: Vec<SurgeryRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for rec in &records {
            if rec.covariates.len() != schema.len() {
                return Err(Error::DimensionMismatch(format!(
                    "record {} carries {} covariates for a schema of {}",
                    rec.record_id,
                    rec.covariates.len(),
                    schema.len()
                )));
            }
            if !seen.insert(rec.record_id.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate record_id `{}`",
                    rec.record_id
                )));
            }
        }
        Ok(Dataset { schema, records })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[SurgeryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_value(&self, record: &SurgeryRecord, name: &str) -> Result<f64> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
        Ok(record.covariates[idx])
    }

    /// Column of covariate values over a subset of records.
    pub fn covariate_column(&self, indices: &[usize], name: &str) -> Result<Vec<f64>> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
        Ok(indices
            .iter()
            .map(|&i| self.records[i].covariates[idx])
            .collect())
    }
}

const REQUIRED_COLUMNS: [&str; 5] = [
    "record_id",
    "surgeon_id",
    "operation_type_id",
    "duration_minutes",
    "date",
];

/// Reads a dataset from a UTF-8, RFC 4180 CSV file.
///
/// The header must contain `record_id, surgeon_id, operation_type_id,
/// duration_minutes, date` plus one column per schema covariate. Row order is
/// preserved and `log_duration` is computed as `ln(duration_minutes)`.
pub fn ingest_csv(path: &Path, schema: &CovariateSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut col_index = BTreeMap::new();
    for required in REQUIRED_COLUMNS
        .iter()
        .copied()
        .chain(schema.names())
    {
        match headers.iter().position(|h| h == required) {
            Some(i) => {
                col_index.insert(required.to_string(), i);
            }
            None => return Err(Error::MissingColumn(required.to_string())),
        }
    }

    let mut records = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (row_number, row) in reader.records().enumerate() {
        let row_number = row_number + 1; // 1-based data rows
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let field = |name: &str| -> &str { row.get(col_index[name]).unwrap_or("") };

        let record_id = field("record_id").to_string();
        if record_id.is_empty() {
            return Err(Error::CsvData {
                row: row_number,
                column: "record_id".into(),
                message: "empty record_id".into(),
            });
        }
        if !seen_ids.insert(record_id.clone()) {
            return Err(Error::CsvData {
                row: row_number,
                column: "record_id".into(),
                message: format!("duplicate record_id `{record_id}`"),
            });
        }

        let duration_minutes: f64 =
            field("duration_minutes")
                .parse()
                .map_err(|_| Error::CsvData {
                    row: row_number,
                    column: "duration_minutes".into(),
                    message: format!("not a number: `{}`", field("duration_minutes")),
                })?;
        if !duration_minutes.is_finite() || duration_minutes <= 0.0 {
            return Err(Error::CsvData {
                row: row_number,
                column: "duration_minutes".into(),
                message: format!("duration must be a positive number, got {duration_minutes}"),
            });
        }

        let date = NaiveDate::parse_from_str(field("date"), "%Y-%m-%d").map_err(|_| {
            Error::CsvData {
                row: row_number,
                column: "date".into(),
                message: format!("unparseable ISO-8601 date `{}`", field("date")),
            }
        })?;

        let mut covariates = Vec::with_capacity(schema.len());
        for (name, kind) in schema.entries() {
            let raw = field(name);
            let value: f64 = raw.parse().map_err(|_| Error::CsvData {
                row: row_number,
                column: name.clone(),
                message: format!("not a number: `{raw}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvData {
                    row: row_number,
                    column: name.clone(),
                    message: "non-finite covariate".into(),
                });
            }
            if *kind == CovariateKind::Indicator && value != 0.0 && value != 1.0 {
                return Err(Error::CsvData {
                    row: row_number,
                    column: name.clone(),
                    message: format!("indicator must be 0 or 1, got {value}"),
                });
            }
            covariates.push(value);
        }

        records.push(SurgeryRecord {
            record_id,
            surgeon_id: field("surgeon_id").to_string(),
            operation_type_id: field("operation_type_id").to_string(),
            log_duration: duration_minutes.ln(),
            duration_minutes,
            date,
            covariates,
        });
    }

    Dataset::new(schema.clone(), records)
}

/// Infers a covariate schema from a CSV file: every non-required header
/// column becomes a covariate, in header order. Columns whose values are all
/// 0/1 become indicators, all-integral columns become counts, and the rest
/// are continuous.
pub fn infer_schema(path: &Path) -> Result<CovariateSchema> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let covariate_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED_COLUMNS.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut binary = vec![true; covariate_cols.len()];
    let mut integral = vec![true; covariate_cols.len()];
    for (row_number, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        for (c, (i, name)) in covariate_cols.iter().enumerate() {
            let raw = row.get(*i).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| Error::CsvData {
                row: row_number + 1,
                column: name.clone(),
                message: format!("not a number: `{raw}`"),
            })?;
            if value != 0.0 && value != 1.0 {
                binary[c] = false;
            }
            if value.fract() != 0.0 {
                integral[c] = false;
            }
        }
    }
    let entries = covariate_cols
        .into_iter()
        .enumerate()
        .map(|(c, (_, name))| {
            let kind = if binary[c] {
                CovariateKind::Indicator
            } else if integral[c] {
                CovariateKind::Count
            } else {
                CovariateKind::Continuous
            };
            (name, kind)
        })
        .collect();
    CovariateSchema::new(entries)
}

/// Writes a dataset back out in the ingestion CSV layout.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(dataset.schema.names().map(|s| s.to_string()));
    writer
        .write_record(&header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for rec in dataset.records() {
        let mut row = vec![
            rec.record_id.clone(),
            rec.surgeon_id.clone(),
            rec.operation_type_id.clone(),
            format!("{}", rec.duration_minutes),
            rec.date.format("%Y-%m-%d").to_string(),
        ];
        row.extend(rec.covariates.iter().map(|v| format!("{v}")));
        writer
            .write_record(&row)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Splits by calendar date: `train` strictly before the cutoff, `test` on or
/// after it. Row order within each part is preserved.
pub fn temporal_split(dataset: &Dataset, cutoff: NaiveDate) -> (Dataset, Dataset) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in dataset.records() {
        if rec.date < cutoff {
            train.push(rec.clone());
        } else {
            test.push(rec.clone());
        }
    }
    (
        Dataset {
            schema: dataset.schema.clone(),
            records: train,
        },
        Dataset {
            schema: dataset.schema.clone(),
            records: test,
        },
    )
}

/// Keeps records whose surgeon has strictly more than `surgeon_min` records
/// and whose operation type has strictly more than `optype_min` records.
/// Counting is a single pass over the input; dropping records for one key
/// does not re-lower the counts of the other.
pub fn eligibility_filter(train: &Dataset, surgeon_min: usize, optype_min: usize) -> Dataset {
    let mut surgeon_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut optype_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in train.records() {
        *surgeon_counts.entry(&rec.surgeon_id).or_default() += 1;
        *optype_counts.entry(&rec.operation_type_id).or_default() += 1;
    }
    let records = train
        .records()
        .iter()
        .filter(|rec| {
            surgeon_counts[rec.surgeon_id.as_str()] > surgeon_min
                && optype_counts[rec.operation_type_id.as_str()] > optype_min
        })
        .cloned()
        .collect();
    Dataset {
        schema: train.schema.clone(),
        records,
    }
}

pub const DEFAULT_SURGEON_MIN: usize = 100;
pub const DEFAULT_OPTYPE_MIN: usize = 15;
/// Interaction tasks keep pairs with at least this many observations.
pub const DEFAULT_MIN_TASK_SIZE: usize = 15;

/// How the training data is split into regression tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Surgeon,
    OperationType,
    Interaction,
}

impl TaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskMode::Surgeon => "surgeon",
            TaskMode::OperationType => "optype",
            TaskMode::Interaction => "interaction",
        }
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surgeon" => Ok(TaskMode::Surgeon),
            "optype" | "operation_type" => Ok(TaskMode::OperationType),
            "interaction" => Ok(TaskMode::Interaction),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected surgeon, optype or interaction)"
            ))),
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies one regression task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKey {
    Surgeon(String),
    OperationType(String),
    Interaction(String, String),
}

impl TaskKey {
    pub fn for_record(mode: TaskMode, rec: &SurgeryRecord) -> TaskKey {
        match mode {
            TaskMode::Surgeon => TaskKey::Surgeon(rec.surgeon_id.clone()),
            TaskMode::OperationType => TaskKey::OperationType(rec.operation_type_id.clone()),
            TaskMode::Interaction => {
                TaskKey::Interaction(rec.surgeon_id.clone(), rec.operation_type_id.clone())
            }
        }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKey::Surgeon(s) => write!(f, "{s}"),
            TaskKey::OperationType(t) => write!(f, "{t}"),
            TaskKey::Interaction(s, t) => write!(f, "{s}:{t}"),
        }
    }
}

/// The training data grouped into disjoint tasks, each with its record
/// indices into the source dataset.
#[derive(Debug, Clone)]
pub struct TaskPartition {
    pub mode: TaskMode,
    /// Sorted by key for deterministic iteration.
    pub tasks: Vec<(TaskKey, Vec<usize>)>,
}

impl TaskPartition {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(|(_, idx)| idx.len()).collect()
    }

    pub fn min_size(&self) -> usize {
        self.sizes().into_iter().min().unwrap_or(0)
    }

    pub fn max_size(&self) -> usize {
        self.sizes().into_iter().max().unwrap_or(0)
    }
}

/// Groups training records by the mode's key and discards tasks smaller than
/// `min_task_size`.
pub fn partition_tasks(
    train: &Dataset,
    mode: TaskMode,
    min_task_size: usize,
) -> Result<TaskPartition> {
    if train.is_empty() {
        return Err(Error::EmptyInput("cannot partition an empty dataset".into()));
    }
    let mut groups: BTreeMap<TaskKey, Vec<usize>> = BTreeMap::new();
    for (i, rec) in train.records().iter().enumerate() {
        groups
            .entry(TaskKey::for_record(mode, rec))
            .or_default()
            .push(i);
    }
    let tasks: Vec<(TaskKey, Vec<usize>)> = groups
        .into_iter()
        .filter(|(_, idx)| idx.len() >= min_task_size)
        .collect();
    if tasks.is_empty() {
        return Err(Error::NoTasks);
    }
    Ok(TaskPartition { mode, tasks })
}

/// Training means of log duration per operation type, used to re-express the
/// response as a deviation from its type's mean. Unseen types fall back to
/// the global training mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeCentering {
    pub type_means: BTreeMap<String, f64>,
    pub global_mean: f64,
}

impl TypeCentering {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("cannot center an empty dataset".into()));
        }
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut total = 0.0;
        for rec in train.records() {
            let entry = sums.entry(rec.operation_type_id.clone()).or_insert((0.0, 0));
            entry.0 += rec.log_duration;
            entry.1 += 1;
            total += rec.log_duration;
        }
        let type_means = sums
            .into_iter()
            .map(|(k, (s, c))| (k, s / c as f64))
            .collect();
        Ok(TypeCentering {
            type_means,
            global_mean: total / train.len() as f64,
        })
    }

    pub fn mean_for(&self, operation_type_id: &str) -> f64 {
        self.type_means
            .get(operation_type_id)
            .copied()
            .unwrap_or(self.global_mean)
    }

    /// `log_duration` minus the record's operation-type training mean.
    pub fn adjusted(&self, rec: &SurgeryRecord) -> f64 {
        rec.log_duration - self.mean_for(&rec.operation_type_id)
    }

    pub fn adjusted_responses(&self, dataset: &Dataset) -> BTreeMap<String, f64> {
        dataset
            .records()
            .iter()
            .map(|r| (r.record_id.clone(), self.adjusted(r)))
            .collect()
    }
}

/// Which record field a categorical encoding expands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalField {
    Surgeon,
    OperationType,
}

impl CategoricalField {
    pub fn value<'a>(&self, rec: &'a SurgeryRecord) -> &'a str {
        match self {
            CategoricalField::Surgeon => &rec.surgeon_id,
            CategoricalField::OperationType => &rec.operation_type_id,
        }
    }

    fn column_prefix(&self) -> &'static str {
        match self {
            CategoricalField::Surgeon => "surgeon_id",
            CategoricalField::OperationType => "operation_type_id",
        }
    }
}

/// Reference coding for one categorical field: the most frequent training
/// level is the reference, every other level with at least `min_level_count`
/// training records gets an indicator column, and rarer or unseen levels map
/// to the reference (an all-zero indicator block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub field: CategoricalField,
    pub reference: String,
    /// Dummy levels in descending training-frequency order (ties broken by
    /// level name).
    pub levels: Vec<String>,
}

/// Deterministic design-matrix encoder fitted on training records.
///
/// Column order: intercept first (when requested), numeric covariates in
/// schema order, then indicator blocks per categorical in frequency order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub numeric: Vec<String>,
    pub categoricals: Vec<CategoricalEncoding>,
    pub intercept: bool,
    column_names: Vec<String>,
}

impl Encoder {
    pub fn fit(
        dataset: &Dataset,
        indices: &[usize],
        subset: &[String],
        categoricals: &[(CategoricalField, usize)],
        intercept: bool,
    ) -> Result<Encoder> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("empty record subset".into()));
        }
        let mut numeric: Vec<(usize, String)> = Vec::new();
        for name in subset {
            let idx = dataset
                .schema()
                .index_of(name)
                .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
            if !numeric.iter().any(|(_, n)| n == name) {
                numeric.push((idx, name.clone()));
            }
        }
        numeric.sort_by_key(|(idx, _)| *idx);
        let numeric: Vec<String> = numeric.into_iter().map(|(_, n)| n).collect();

        let mut encodings = Vec::new();
        for &(field, min_level_count) in categoricals {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in indices {
                *counts.entry(field.value(&dataset.records()[i])).or_default() += 1;
            }
            let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
            ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            let reference = ordered[0].0.to_string();
            let levels = ordered
                .iter()
                .skip(1)
                .filter(|(_, c)| *c >= min_level_count.max(1))
                .map(|(l, _)| l.to_string())
                .collect();
            encodings.push(CategoricalEncoding {
                field,
                reference,
                levels,
            });
        }

        let mut column_names = Vec::new();
        if intercept {
            column_names.push("intercept".to_string());
        }
        column_names.extend(numeric.iter().cloned());
        for enc in &encodings {
            for level in &enc.levels {
                column_names.push(format!("{}={}", enc.field.column_prefix(), level));
            }
        }

        Ok(Encoder {
            numeric,
            categoricals: encodings,
            intercept,
            column_names,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn dimension(&self) -> usize {
        self.column_names.len()
    }

    pub fn encode_row(&self, schema: &CovariateSchema, rec: &SurgeryRecord) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.dimension());
        if self.intercept {
            row.push(1.0);
        }
        for name in &self.numeric {
            let idx = schema
                .index_of(name)
                .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
            row.push(rec.covariates[idx]);
        }
        for enc in &self.categoricals {
            let value = enc.field.value(rec);
            for level in &enc.levels {
                row.push(if level == value { 1.0 } else { 0.0 });
            }
        }
        Ok(row)
    }

    pub fn encode(&self, dataset: &Dataset, indices: &[usize]) -> Result<DesignMatrix> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("empty record subset".into()));
        }
        let d = self.dimension();
        let mut values = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            let row = self.encode_row(dataset.schema(), &dataset.records()[i])?;
            for (c, v) in row.into_iter().enumerate() {
                values[[r, c]] = v;
            }
        }
        DesignMatrix::new(values, self.column_names.clone(), self.intercept)
    }
}

/// Fits an encoder on the given records and encodes them in one step.
pub fn encode_design(
    dataset: &Dataset,
    indices: &[usize],
    subset: &[String],
    categoricals: &[(CategoricalField, usize)],
    include_intercept: bool,
) -> Result<(DesignMatrix, Encoder)> {
    let encoder = Encoder::fit(dataset, indices, subset, categoricals, include_intercept)?;
    let design = encoder.encode(dataset, indices)?;
    Ok((design, encoder))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_computes_log_duration() {
        let file = write_temp_csv(
            "record_id,surgeon_id,operation_type_id,duration_minutes,date,age,flag\n\
             a,S1,T1,68.1,2015-03-02,53,1\n\
             b,S1,T1,1,2015-03-03,40,0\n\
             c,S2,T2,120.5,2016-01-01,61,1\n",
        );
        let ds = ingest_csv(file.path(), &tiny_schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.records()[0].log_duration - 4.221).abs() < 1e-3);
        assert_eq!(ds.records()[1].log_duration, 0.0);
        assert_eq!(ds.records()[0].covariates, vec![53.0, 1.0]);
    }

    #[test]
    fn schema_inference_classifies_kinds() {
        let file = write_temp_csv(
            "record_id,surgeon_id,operation_type_id,duration_minutes,date,age,flag,score\n\
             a,S1,T1,68.1,2015-03-02,53,1,0.75\n\
             b,S1,T1,30,2015-03-03,40,0,1.25\n",
        );
        let schema = infer_schema(file.path()).unwrap();
        assert_eq!(
            schema.entries(),
            &[
                ("age".to_string(), CovariateKind::Count),
                ("flag".to_string(), CovariateKind::Indicator),
                ("score".to_string(), CovariateKind::Continuous),
            ]
        );
        // The inferred schema ingests the same file.
        assert_eq!(ingest_csv(file.path(), &schema).unwrap().len(), 2);
    }

    #[test]
    fn ingest_round_trips_through_write_csv() {
        let file = write_temp_csv(
            "record_id,surgeon_id,operation_type_id,duration_minutes,date,age,flag\n\
             a,S1,T1,68.1,2015-03-02,53,1\n\
             b,S1,T1,30,2015-03-03,40,0\n\
             c,S2,T2,120.5,2016-01-01,61,1\n",
        );
        let ds = ingest_csv(file.path(), &tiny_schema()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let back = ingest_csv(out.path(), &tiny_schema()).unwrap();
        assert_eq!(ds.records(), back.records());
    }

    #[test]
    fn ingest_rejects_bad_rows_with_location() {
        let schema = tiny_schema();
        let base = "record_id,surgeon_id,operation_type_id,duration_minutes,date,age,flag\n";

        let dup = write_temp_csv(&format!(
            "{base}a,S1,T1,10,2015-01-01,5,0\na,S1,T1,10,2015-01-02,5,0\n"
        ));
        match ingest_csv(dup.path(), &schema) {
            Err(Error::CsvData { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "record_id");
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }

        let neg = write_temp_csv(&format!("{base}a,S1,T1,-3,2015-01-01,5,0\n"));
        assert!(matches!(
            ingest_csv(neg.path(), &schema),
            Err(Error::CsvData { column, .. }) if column == "duration_minutes"
        ));

        let bad_date = write_temp_csv(&format!("{base}a,S1,T1,10,01/02/2015,5,0\n"));
        assert!(matches!(
            ingest_csv(bad_date.path(), &schema),
            Err(Error::CsvData { column, .. }) if column == "date"
        ));

        let bad_cov = write_temp_csv(&format!("{base}a,S1,T1,10,2015-01-01,old,0\n"));
        assert!(matches!(
            ingest_csv(bad_cov.path(), &schema),
            Err(Error::CsvData { column, .. }) if column == "age"
        ));

        let missing = write_temp_csv(
            "record_id,surgeon_id,operation_type_id,duration_minutes,age,flag\na,S1,T1,10,5,0\n",
        );
        assert!(matches!(
            ingest_csv(missing.path(), &schema),
            Err(Error::MissingColumn(c)) if c == "date"
        ));

        let bad_indicator = write_temp_csv(&format!("{base}a,S1,T1,10,2015-01-01,5,2\n"));
        assert!(matches!(
            ingest_csv(bad_indicator.path(), &schema),
            Err(Error::CsvData { column, .. }) if column == "flag"
        ));
    }

    fn split_fixture() -> Dataset {
        dataset_from_rows(
            tiny_schema(),
            &[
                ("S1", "T1", 60.0, "2016-05-01", vec![50.0, 0.0]),
                ("S1", "T1", 70.0, "2017-12-31", vec![51.0, 1.0]),
                ("S2", "T2", 80.0, "2018-01-01", vec![52.0, 0.0]),
                ("S2", "T2", 90.0, "2019-06-15", vec![53.0, 1.0]),
            ],
        )
    }

    #[test]
    fn temporal_split_is_a_partition() {
        let ds = split_fixture();
        let cutoff = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let (train, test) = temporal_split(&ds, cutoff);
        assert_eq!(train.len(), 2);
        assert_eq!(test.len(), 2);
        assert!(train.records().iter().all(|r| r.date < cutoff));
        assert!(test.records().iter().all(|r| r.date >= cutoff));
        // Concatenation restores the original order.
        let merged: Vec<&str> = train
            .records()
            .iter()
            .chain(test.records())
            .map(|r| r.record_id.as_str())
            .collect();
        let mut expect: Vec<&str> = ds.records().iter().map(|r| r.record_id.as_str()).collect();
        expect.sort();
        let mut merged_sorted = merged.clone();
        merged_sorted.sort();
        assert_eq!(merged_sorted, expect);
    }

    #[test]
    fn temporal_split_boundaries() {
        let ds = split_fixture();
        let (_, test) = temporal_split(&ds, NaiveDate::from_ymd_opt(2030, 1, 1).unwrap());
        assert!(test.is_empty());
        let empty = Dataset::new(tiny_schema(), vec![]).unwrap();
        let (a, b) = temporal_split(&empty, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap());
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn eligibility_uses_strict_inequality() {
        // One surgeon with exactly 100 records: dropped. Another with 101: kept.
        let mut rows = Vec::new();
        for _ in 0..100 {
            rows.push(("S_low", "T1", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        for _ in 0..101 {
            rows.push(("S_high", "T1", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let kept = eligibility_filter(&ds, 100, 15);
        assert_eq!(kept.len(), 101);
        assert!(kept.records().iter().all(|r| r.surgeon_id == "S_high"));
    }

    #[test]
    fn eligibility_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rows = Vec::new();
        for _ in 0..600 {
            let s = format!("S{}", rng.random_range(0..8));
            let t = format!("T{}", rng.random_range(0..6));
            rows.push((s, t));
        }
        let owned: Vec<(&str, &str, f64, &str, Vec<f64>)> = rows
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str(), 45.0, "2014-02-03", vec![2.0, 1.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &owned);

        let kept = eligibility_filter(&ds, 70, 90);

        // Independent count-then-filter pass.
        let mut sc: BTreeMap<&str, usize> = BTreeMap::new();
        let mut tc: BTreeMap<&str, usize> = BTreeMap::new();
        for r in ds.records() {
            *sc.entry(&r.surgeon_id).or_default() += 1;
            *tc.entry(&r.operation_type_id).or_default() += 1;
        }
        let expect: Vec<&str> = ds
            .records()
            .iter()
            .filter(|r| sc[r.surgeon_id.as_str()] > 70 && tc[r.operation_type_id.as_str()] > 90)
            .map(|r| r.record_id.as_str())
            .collect();
        let got: Vec<&str> = kept.records().iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn partition_single_group_in_every_mode() {
        let rows: Vec<(&str, &str, f64, &str, Vec<f64>)> = (0..20)
            .map(|_| ("S1", "T1", 60.0, "2015-01-01", vec![1.0, 0.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &rows);
        for mode in [TaskMode::Surgeon, TaskMode::OperationType, TaskMode::Interaction] {
            let p = partition_tasks(&ds, mode, 15).unwrap();
            assert_eq!(p.len(), 1);
            assert_eq!(p.tasks[0].1.len(), 20);
        }
    }

    #[test]
    fn partition_matches_group_by_oracle_and_is_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        for _ in 0..400 {
            let s = format!("S{}", rng.random_range(0..5));
            let t = format!("T{}", rng.random_range(0..4));
            rows.push((s, t));
        }
        let owned: Vec<(&str, &str, f64, &str, Vec<f64>)> = rows
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str(), 52.0, "2013-07-08", vec![3.0, 0.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &owned);
        let p = partition_tasks(&ds, TaskMode::Interaction, 1).unwrap();

        let mut oracle: BTreeMap<(String, String), usize> = BTreeMap::new();
        for r in ds.records() {
            *oracle
                .entry((r.surgeon_id.clone(), r.operation_type_id.clone()))
                .or_default() += 1;
        }
        let total: usize = p.sizes().iter().sum();
        assert_eq!(total, ds.len());
        assert_eq!(p.len(), oracle.len());

        // Index sets are pairwise disjoint and in bounds in every mode.
        for mode in [TaskMode::Surgeon, TaskMode::OperationType, TaskMode::Interaction] {
            let p = partition_tasks(&ds, mode, 1).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (key, idx) in &p.tasks {
                for &i in idx {
                    assert!(i < ds.len());
                    assert!(seen.insert(i), "index {i} in two tasks");
                    assert_eq!(TaskKey::for_record(mode, &ds.records()[i]), *key);
                }
            }
        }
    }

    #[test]
    fn partition_drops_small_tasks() {
        let mut rows = Vec::new();
        for _ in 0..20 {
            rows.push(("S1", "T1", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        for _ in 0..5 {
            rows.push(("S2", "T2", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let p = partition_tasks(&ds, TaskMode::Surgeon, 15).unwrap();
        assert_eq!(p.len(), 1);
        assert!(partition_tasks(&ds, TaskMode::Surgeon, 50).is_err());
    }

    #[test]
    fn centering_by_single_type_sums_to_zero() {
        let rows: Vec<(&str, &str, f64, &str, Vec<f64>)> = [55.0, 70.0, 91.0]
            .iter()
            .map(|&d| ("S1", "T1", d, "2015-01-01", vec![1.0, 0.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let centering = TypeCentering::fit(&ds).unwrap();
        let total: f64 = ds.records().iter().map(|r| centering.adjusted(r)).sum();
        assert!(total.abs() < 1e-10);
    }

    #[test]
    fn centering_arithmetic() {
        // Type means 4.0 and 5.0; a record of the second type with Y = 5.3
        // adjusts to 0.3.
        let d1 = f64::exp(4.0);
        let d2 = f64::exp(5.0);
        let d3 = f64::exp(5.3);
        let rows = vec![
            ("S1", "T1", d1, "2015-01-01", vec![1.0, 0.0]),
            ("S1", "T1", d1, "2015-01-02", vec![1.0, 0.0]),
            ("S1", "T2", d2, "2015-01-03", vec![1.0, 0.0]),
            ("S1", "T2", f64::exp(4.7), "2015-01-04", vec![1.0, 0.0]),
        ];
        let mut ds = dataset_from_rows(tiny_schema(), &rows);
        // Force the two T2 log durations to average exactly 5.0.
        let recs = vec![
            ds.records()[0].clone(),
            ds.records()[1].clone(),
            SurgeryRecord {
                log_duration: 5.3,
                duration_minutes: d3,
                record_id: "extra".into(),
                ..ds.records()[2].clone()
            },
            ds.records()[2].clone(),
            SurgeryRecord {
                log_duration: 4.7,
                duration_minutes: f64::exp(4.7),
                record_id: "extra2".into(),
                ..ds.records()[2].clone()
            },
        ];
        ds = Dataset::new(tiny_schema(), recs).unwrap();
        let centering = TypeCentering::fit(&ds).unwrap();
        assert!((centering.mean_for("T2") - 5.0).abs() < 1e-12);
        let rec = ds
            .records()
            .iter()
            .find(|r| r.record_id == "extra")
            .unwrap();
        assert!((centering.adjusted(rec) - 0.3).abs() < 1e-12);
        // Unseen type falls back to the global mean.
        assert_eq!(centering.mean_for("T_unseen"), centering.global_mean);
    }

    #[test]
    fn centering_matches_streaming_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        let rows: Vec<(String, f64)> = (0..500)
            .map(|_| {
                (
                    format!("T{}", rng.random_range(0..7)),
                    rng.random_range(30.0..200.0),
                )
            })
            .collect();
        let owned: Vec<(&str, &str, f64, &str, Vec<f64>)> = rows
            .iter()
            .map(|(t, d)| ("S1", t.as_str(), *d, "2015-06-07", vec![1.0, 0.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &owned);
        let centering = TypeCentering::fit(&ds).unwrap();

        // Streaming (Welford-style running mean) oracle.
        let mut means: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in ds.records() {
            let e = means.entry(&r.operation_type_id).or_insert((0.0, 0));
            e.1 += 1;
            e.0 += (r.log_duration - e.0) / e.1 as f64;
        }
        for (t, (m, _)) in means {
            assert!((centering.type_means[t] - m).abs() < 1e-12);
        }

        // Adding the means back reconstructs the log durations.
        for r in ds.records() {
            let rebuilt = centering.adjusted(r) + centering.mean_for(&r.operation_type_id);
            assert!((rebuilt - r.log_duration).abs() < 1e-12);
        }

        // The record-keyed view agrees with per-record adjustment.
        let by_id = centering.adjusted_responses(&ds);
        assert_eq!(by_id.len(), ds.len());
        for r in ds.records() {
            assert_eq!(by_id[&r.record_id], centering.adjusted(r));
        }
    }

    #[test]
    fn encoder_reference_codes_dummy_counts() {
        // 32 surgeons and 123 operation types give 31 + 122 = 153 dummies.
        let mut rows = Vec::new();
        for s in 0..32 {
            for t in 0..123 {
                rows.push((format!("S{s:03}"), format!("T{t:03}")));
            }
        }
        let owned: Vec<(&str, &str, f64, &str, Vec<f64>)> = rows
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str(), 60.0, "2015-01-01", vec![1.0, 0.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &owned);
        let indices: Vec<usize> = (0..ds.len()).collect();
        let encoder = Encoder::fit(
            &ds,
            &indices,
            &[],
            &[
                (CategoricalField::Surgeon, 1),
                (CategoricalField::OperationType, 1),
            ],
            true,
        )
        .unwrap();
        // intercept + 31 + 122
        assert_eq!(encoder.dimension(), 1 + 31 + 122);
    }

    #[test]
    fn encoder_two_levels_one_dummy() {
        let rows = vec![
            ("S1", "T1", 60.0, "2015-01-01", vec![1.0, 0.0]),
            ("S1", "T1", 60.0, "2015-01-02", vec![1.0, 0.0]),
            ("S1", "T2", 60.0, "2015-01-03", vec![1.0, 0.0]),
        ];
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let indices: Vec<usize> = (0..3).collect();
        let encoder = Encoder::fit(
            &ds,
            &indices,
            &[],
            &[(CategoricalField::OperationType, 1)],
            true,
        )
        .unwrap();
        // T1 is more frequent, so it is the reference and T2 gets the dummy.
        assert_eq!(encoder.column_names(), &["intercept", "operation_type_id=T2"]);
        let design = encoder.encode(&ds, &indices).unwrap();
        assert_eq!(design.values().column(1).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn encoder_rows_have_at_most_one_dummy_per_categorical() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<(String, String)> = (0..200)
            .map(|_| {
                (
                    format!("S{}", rng.random_range(0..6)),
                    format!("T{}", rng.random_range(0..9)),
                )
            })
            .collect();
        let owned: Vec<(&str, &str, f64, &str, Vec<f64>)> = rows
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str(), 60.0, "2015-01-01", vec![2.0, 1.0]))
            .collect();
        let ds = dataset_from_rows(tiny_schema(), &owned);
        let indices: Vec<usize> = (0..ds.len()).collect();
        let (design, encoder) = encode_design(
            &ds,
            &indices,
            &["age".into()],
            &[
                (CategoricalField::Surgeon, 1),
                (CategoricalField::OperationType, 1),
            ],
            true,
        )
        .unwrap();
        let s_block = 2..2 + encoder.categoricals[0].levels.len();
        let t_block = s_block.end..design.n_cols();
        for i in 0..design.n_rows() {
            let ones_s: f64 = s_block.clone().map(|j| design.values()[[i, j]]).sum();
            let ones_t: f64 = t_block.clone().map(|j| design.values()[[i, j]]).sum();
            assert!(ones_s == 0.0 || ones_s == 1.0);
            assert!(ones_t == 0.0 || ones_t == 1.0);
        }
    }

    #[test]
    fn encoder_threshold_maps_rare_levels_to_reference() {
        let mut rows = Vec::new();
        for _ in 0..12 {
            rows.push(("S1", "T_common", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        for _ in 0..11 {
            rows.push(("S1", "T_mid", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        for _ in 0..10 {
            rows.push(("S1", "T_rare", 60.0, "2015-01-01", vec![1.0, 0.0]));
        }
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let indices: Vec<usize> = (0..ds.len()).collect();
        // Threshold 11 means "more than 10 observations".
        let encoder = Encoder::fit(
            &ds,
            &indices,
            &[],
            &[(CategoricalField::OperationType, 11)],
            true,
        )
        .unwrap();
        assert_eq!(
            encoder.column_names(),
            &["intercept", "operation_type_id=T_mid"]
        );
    }

    #[test]
    fn encode_is_deterministic() {
        let rows = vec![
            ("S2", "T2", 60.0, "2015-01-01", vec![4.0, 1.0]),
            ("S1", "T1", 61.0, "2015-01-02", vec![5.0, 0.0]),
            ("S1", "T2", 62.0, "2015-01-03", vec![6.0, 1.0]),
        ];
        let ds = dataset_from_rows(tiny_schema(), &rows);
        let indices: Vec<usize> = (0..3).collect();
        let args: (&[String], _) = (
            &["flag".into(), "age".into()],
            [(CategoricalField::Surgeon, 1)],
        );
        let (a, _) = encode_design(&ds, &indices, args.0, &args.1, true).unwrap();
        let (b, _) = encode_design(&ds, &indices, args.0, &args.1, true).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.column_names(), b.column_names());
        // Numeric columns come in schema order regardless of the subset order.
        assert_eq!(a.column_names()[1], "age");
        assert_eq!(a.column_names()[2], "flag");
    }

    #[test]
    fn encode_rejects_unknown_subset_names() {
        let ds = dataset_from_rows(
            tiny_schema(),
            &[("S1", "T1", 60.0, "2015-01-01", vec![1.0, 0.0])],
        );
        let err = encode_design(&ds, &[0], &["nope".into()], &[], true);
        assert!(matches!(err, Err(Error::UnknownCovariate(_))));
        let err = encode_design(&ds, &[], &[], &[], true);
        assert!(matches!(err, Err(Error::EmptyInput(_))));
    }
}
