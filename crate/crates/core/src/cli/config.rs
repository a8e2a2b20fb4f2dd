//! JSON documents accepted by `--config`. Relative paths inside a document
//! resolve against the document's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::real::default_lengths;
use crate::evaluation::{Metric, ProbeConfig};
use crate::models::ModelSpec;
use crate::timeseries::io::read_jsonl;
use crate::timeseries::{scale_window, split_real, DatasetSplit, SplitMeta, SyntheticConfig};
use crate::training::TrainConfig;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))
}

pub fn base_dir(config: Option<&Path>) -> PathBuf {
    config
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCommand {
    pub data: SyntheticConfig,
    /// Series written to `train.jsonl`; defaults to four fifths of `n_series`.
    pub n_train: Option<usize>,
}

impl SynthCommand {
    pub fn n_train(&self) -> usize {
        self.n_train.unwrap_or(self.data.n_series * 4 / 5)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.n_train() > self.data.n_series {
            return Err(Error::config("n_train", format!("exceeds n_series ({})", self.data.n_series)));
        }
        Ok(())
    }
}

/// How a dataset file is cut into windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Every series is exactly one context plus one forecast (synthetic files).
    Windows,
    /// Long series: the last `tau_f` values are the test target.
    #[default]
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub tau_c: Option<usize>,
    #[serde(default)]
    pub tau_f: Option<usize>,
}

impl DataSpec {
    pub fn resolve(&self, base: &Path, field: &str) -> Result<DataSpec> {
        let path = base.join(&self.path);
        if !path.is_file() {
            return Err(Error::config(format!("{field}.path"), format!("{} does not exist", path.display())));
        }
        if self.tau_c == Some(0) || self.tau_f == Some(0) {
            return Err(Error::config(format!("{field}.tau_c/tau_f"), "must be positive"));
        }
        Ok(DataSpec { path, ..self.clone() })
    }

    pub fn name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }

    /// Reads the file; `Windows` layouts put every series in both the
    /// training pool and the test windows, callers use the half they need.
    pub fn load(&self) -> Result<DatasetSplit> {
        let series = read_jsonl(&self.path)?;
        let first = series
            .first()
            .ok_or_else(|| Error::Dataset(format!("{} holds no series", self.path.display())))?;
        match self.layout {
            Layout::Windows => {
                let tau_c = self.tau_c.unwrap_or(120);
                let tau_f = self.tau_f.unwrap_or(first.len().saturating_sub(tau_c));
                if tau_f == 0 {
                    return Err(Error::Dataset(format!("{}: series shorter than tau_c={tau_c}", self.path.display())));
                }
                if let Some(bad) = series.iter().find(|s| s.len() != tau_c + tau_f) {
                    return Err(Error::Dataset(format!(
                        "{}: series {:?} has length {}, expected {}",
                        self.path.display(),
                        bad.id,
                        bad.len(),
                        tau_c + tau_f
                    )));
                }
                let test = series
                    .iter()
                    .map(|s| scale_window(&s.values[..tau_c], &s.values[tau_c..], &s.id))
                    .collect();
                Ok(DatasetSplit {
                    meta: SplitMeta {
                        freq_tag: first.freq_tag.clone(),
                        tau_c,
                        tau_f,
                        skipped: Vec::new(),
                    },
                    train: series,
                    test,
                })
            }
            Layout::Series => {
                let defaults = default_lengths(&first.freq_tag);
                let missing = || Error::config("tau_c/tau_f", format!("required for frequency tag {:?}", first.freq_tag));
                let tau_c = self.tau_c.or(defaults.map(|d| d.0)).ok_or_else(missing)?;
                let tau_f = self.tau_f.or(defaults.map(|d| d.1)).ok_or_else(missing)?;
                split_real(series, tau_c, tau_f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommand {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub sources: Vec<DataSpec>,
}

impl TrainCommand {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::config("sources", "at least one source dataset is required"));
        }
        if let ModelSpec::Cfa(c) = &self.model {
            c.validate()?;
            if c.k != self.train.k {
                return Err(Error::config("train.k", format!("differs from the model's k={}", c.k)));
            }
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCommand {
    pub checkpoint: PathBuf,
    pub data: DataSpec,
    #[serde(default)]
    pub metric: Metric,
    /// Score only the first this-many test windows.
    #[serde(default)]
    pub max_windows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCommand {
    /// Key dump whose probe error goes in the numerator of the ratio.
    pub a: PathBuf,
    pub b: PathBuf,
    #[serde(default)]
    pub probe: ProbeConfig,
}
