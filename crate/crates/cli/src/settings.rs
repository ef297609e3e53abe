//! Optional TOML settings: every flag has a config-file equivalent under a
//! section named after its subcommand; explicit flags always win.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use surgdur::{Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub generate: GenerateSection,
    pub filter: FilterSection,
    pub select: SelectSection,
    pub fit: FitSection,
    pub evaluate: EvaluateSection,
    pub predict: PredictSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub out: Option<PathBuf>,
    pub truth_out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub train: Option<PathBuf>,
    pub k: Option<usize>,
    pub schema: Option<PathBuf>,
    pub surgeon_min: Option<usize>,
    pub optype_min: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct SelectSection {
    pub train: Option<PathBuf>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub pool_size: Option<usize>,
    pub grid_min: Option<usize>,
    pub grid_max: Option<usize>,
    pub surgeon_min: Option<usize>,
    pub optype_min: Option<usize>,
    pub min_task_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct FitSection {
    pub train: Option<PathBuf>,
    pub rule: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub surgeon_min: Option<usize>,
    pub optype_min: Option<usize>,
    pub min_task_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub baselines: Option<String>,
    pub external: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub reps: Option<usize>,
    pub baseline_reps: Option<usize>,
    pub pool_size: Option<usize>,
    pub surgeon_min: Option<usize>,
    pub optype_min: Option<usize>,
    pub min_task_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct PredictSection {
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        match path {
            None => Ok(Settings::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io { path: path.into(), source: e })?;
                toml::from_str(&text).map_err(|e| Error::Format {
                    path: path.into(),
                    message: e.to_string(),
                })
            }
        }
    }
}

/// A flag value, falling back to the config file, then to a default.
pub fn resolve<T: Clone>(flag: Option<T>, section: Option<T>, default: T) -> T {
    flag.or(section).unwrap_or(default)
}

/// A required setting: flag or config file.
pub fn require<T>(flag: Option<T>, section: Option<T>, name: &str) -> Result<T> {
    flag.or(section).ok_or_else(|| {
        Error::InvalidArgument(format!("missing required setting `{name}` (flag or config file)"))
    })
}
