//! Leave-one-out frequency generalization on datasets read from JSON Lines.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalEntry, EvalReport, Metric, RunMeta, Summary};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{CfaConfig, LstmConfig, Model, ModelSpec};
use crate::timeseries::io::read_jsonl;
use crate::timeseries::{split_real, sub_seed, DatasetSplit, TimeSeries};
use crate::training::{train, ForecastLoss, TrainConfig};

/// Default `(tau_c, tau_f)` per frequency tag: five and one nominal periods.
pub fn default_lengths(freq_tag: &str) -> Option<(usize, usize)> {
    match freq_tag {
        "H" => Some((120, 24)),
        "D" => Some((35, 7)),
        "M" => Some((36, 12)),
        "Q" => Some((12, 4)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealDataset {
    pub name: String,
    pub path: PathBuf,
    /// Falls back to [`default_lengths`] of the file's frequency tag.
    #[serde(default)]
    pub tau_c: Option<usize>,
    #[serde(default)]
    pub tau_f: Option<usize>,
}

/// Reads a dataset file and splits it by time.
pub fn load_real(ds: &RealDataset) -> Result<DatasetSplit> {
    if !ds.path.exists() {
        return Err(Error::Dataset(format!("dataset {:?}: missing file {}", ds.name, ds.path.display())));
    }
    let series = read_jsonl(&ds.path)?;
    split_with_lengths(&ds.name, series, ds.tau_c, ds.tau_f)
}

pub fn split_with_lengths(name: &str, series: Vec<TimeSeries>, tau_c: Option<usize>, tau_f: Option<usize>) -> Result<DatasetSplit> {
    let tag = series
        .first()
        .map(|s| s.freq_tag.clone())
        .ok_or_else(|| Error::Dataset(format!("dataset {name:?} has no series")))?;
    let defaults = default_lengths(&tag);
    let pick = |v: Option<usize>, d: Option<usize>, field: &str| {
        v.or(d).ok_or_else(|| {
            Error::config(
                format!("datasets[{name}].{field}"),
                format!("required for frequency tag {tag:?}"),
            )
        })
    };
    let tau_c = pick(tau_c, defaults.map(|d| d.0), "tau_c")?;
    let tau_f = pick(tau_f, defaults.map(|d| d.1), "tau_f")?;
    split_real(series, tau_c, tau_f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealConfig {
    pub datasets: Vec<RealDataset>,
    pub models: Vec<ModelSpec>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub metric: Metric,
}

impl Default for RealConfig {
    fn default() -> Self {
        RealConfig {
            datasets: Vec::new(),
            models: vec![
                ModelSpec::Mean,
                ModelSpec::Cfa(CfaConfig {
                    k: 2,
                    ..CfaConfig::default()
                }),
                ModelSpec::Lstm(LstmConfig::default()),
            ],
            seeds: vec![0, 1, 2],
            train: TrainConfig {
                k: 2,
                loss: ForecastLoss::Nd,
                ..TrainConfig::default()
            },
            metric: Metric::Nd,
        }
    }
}

impl RealConfig {
    pub fn validate(&self) -> Result<()> {
        check_names(self.datasets.iter().map(|d| d.name.as_str()))?;
        self.validate_settings()
    }

    /// Everything except the dataset list, for callers that bring loaded data.
    pub fn validate_settings(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        for m in &self.models {
            if let ModelSpec::Cfa(c) = m {
                c.validate()?;
                if c.k != self.train.k {
                    return Err(Error::config("train.k", format!("differs from the attention model's k={}", c.k)));
                }
            }
        }
        self.train.validate()
    }
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let names: Vec<&str> = names.collect();
    if names.len() < 2 {
        return Err(Error::config("datasets", "at least two datasets are needed for leave-one-out"));
    }
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(Error::config("datasets", format!("duplicate dataset name {a:?}")));
        }
    }
    Ok(())
}

/// Trains every model on all datasets except `target` and scores it zero-shot
/// on `target`'s test windows, once per seed.
pub fn run_real(
    target: &str,
    data: &[(String, DatasetSplit)],
    models: &[ModelSpec],
    seeds: &[u64],
    train_cfg: &TrainConfig,
    metric: Metric,
    exec: Exec,
) -> Result<Vec<EvalEntry>> {
    let t_idx = data
        .iter()
        .position(|(n, _)| n == target)
        .ok_or_else(|| Error::Dataset(format!("unknown target dataset {target:?}")))?;
    let sources: Vec<DatasetSplit> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t_idx)
        .map(|(_, (_, s))| s.clone())
        .collect();
    if sources.is_empty() {
        return Err(Error::config("datasets", "no source datasets besides the target"));
    }
    let units: Vec<(&ModelSpec, u64)> = models.iter().flat_map(|m| seeds.iter().map(move |&s| (m, s))).collect();
    info!("leave-one-out target {target}: {} sources, {} runs", sources.len(), units.len());
    let values: Vec<Result<f64>> = exec.map_indexed(units.len(), |i| {
        let (spec, seed) = units[i];
        let unit_seed = sub_seed(seed, t_idx as u64);
        let mut model = Model::new(&spec.with_init_seed(unit_seed))?;
        let tc = TrainConfig {
            seed: unit_seed,
            ..train_cfg.clone()
        };
        train(&mut model, &sources, &tc)?;
        evaluate(&model, &data[t_idx].1, metric, Exec::Sequential)
    });
    let mut values = values.into_iter();
    let mut out = Vec::new();
    for spec in models {
        let per_seed = values.by_ref().take(seeds.len()).collect::<Result<Vec<f64>>>()?;
        out.push(EvalEntry {
            dataset: target.to_string(),
            model: spec.name().to_string(),
            metric,
            summary: Summary::from_values(per_seed),
        });
    }
    Ok(out)
}

/// One leave-one-out run per dataset.
pub fn run_real_all(cfg: &RealConfig, data: &[(String, DatasetSplit)], exec: Exec) -> Result<EvalReport> {
    cfg.validate_settings()?;
    check_names(data.iter().map(|(n, _)| n.as_str()))?;
    let mut entries = Vec::new();
    for (name, _) in data {
        entries.extend(run_real(name, data, &cfg.models, &cfg.seeds, &cfg.train, cfg.metric, exec)?);
    }
    let mut meta = RunMeta::new(&cfg.seeds);
    meta.settings.insert("epochs".into(), cfg.train.epochs.to_string());
    meta.settings.insert("lambda".into(), cfg.train.lambda.to_string());
    meta.settings.insert("k".into(), cfg.train.k.to_string());
    Ok(EvalReport { entries, meta })
}

/// Loads every configured dataset (missing files are an error).
pub fn load_all(cfg: &RealConfig, base: &Path) -> Result<Vec<(String, DatasetSplit)>> {
    cfg.datasets
        .iter()
        .map(|d| {
            let resolved = RealDataset {
                path: base.join(&d.path),
                ..d.clone()
            };
            Ok((d.name.clone(), load_real(&resolved)?))
        })
        .collect()
}

/// Positive seasonal series standing in for a real dataset of one frequency:
/// level × (1 + seasonal profile + slow trend) × lognormal-ish noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalFixture {
    pub freq_tag: String,
    pub period: usize,
    pub n_series: usize,
    pub length: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SeasonalFixture {
    /// Fixture for one of the tags `H`, `D`, `M`, `Q`.
    pub fn for_tag(tag: &str, n_series: usize, seed: u64) -> Result<SeasonalFixture> {
        let (period, length) = match tag {
            "H" => (24, 360),
            "D" => (7, 140),
            "M" => (12, 120),
            "Q" => (4, 48),
            other => return Err(Error::config("freq_tag", format!("no fixture for tag {other:?}"))),
        };
        Ok(SeasonalFixture {
            freq_tag: tag.to_string(),
            period,
            n_series,
            length,
            noise: 0.05,
            seed,
        })
    }

    pub fn generate(&self) -> Vec<TimeSeries> {
        (0..self.n_series)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, i as u64));
                let level = rng.random_range(5.0..50.0);
                let amp = rng.random_range(0.2..0.5);
                let harmonic = rng.random_range(0.0..0.4);
                let phase = rng.random_range(0.0..2.0 * PI);
                let trend = rng.random_range(-0.3..0.3) / self.length as f64;
                let noise = Normal::new(0.0, self.noise).expect("finite sigma");
                let p = self.period as f64;
                let values = (0..self.length)
                    .map(|t| {
                        let x = 2.0 * PI * t as f64 / p + phase;
                        let season = amp * (x.sin() + harmonic * (2.0 * x).sin());
                        level * (1.0 + season + trend * t as f64) * (1.0 + noise.sample(&mut rng))
                    })
                    .collect();
                TimeSeries {
                    id: format!("{}-{i}", self.freq_tag),
                    freq_tag: self.freq_tag.clone(),
                    start: None,
                    values,
                }
            })
            .collect()
    }
}
