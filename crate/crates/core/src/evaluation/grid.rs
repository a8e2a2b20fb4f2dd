//! Source-range × target-range zero-shot grid on synthetic sines.
//!
//! Every (source range, model, seed) is trained once and scored on every
//! other range; a cell of the report is one (source, target, model) triple
//! summarised over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::dump::csv_field;
use super::{evaluate, Metric, RunMeta, Summary};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{CfaConfig, LstmConfig, Model, ModelSpec};
use crate::timeseries::{generate_synthetic_dataset_with, split_synthetic, sub_seed, DatasetSplit, SyntheticConfig};
use crate::training::{train, TrainConfig};

/// Inclusive period range `(p_min, p_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRange(pub f64, pub f64);

impl PeriodRange {
    pub fn label(&self) -> String {
        format!("{}:{}", self.0, self.1)
    }
}

impl std::str::FromStr for PeriodRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("ranges", format!("expected min:max, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        Ok(PeriodRange(lo, hi))
    }
}

/// Parses `10:15,15:20,...`.
pub fn parse_ranges(s: &str) -> Result<Vec<PeriodRange>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ranges: Vec<PeriodRange>,
    pub models: Vec<ModelSpec>,
    pub seeds: Vec<u64>,
    /// Base generator settings; the period range and seed are set per range.
    pub data: SyntheticConfig,
    pub n_train: usize,
    pub train: TrainConfig,
    pub metric: Metric,
    /// Score only the first this-many test windows of each target.
    pub max_test_windows: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            ranges: vec![
                PeriodRange(10.0, 15.0),
                PeriodRange(15.0, 20.0),
                PeriodRange(20.0, 25.0),
                PeriodRange(25.0, 30.0),
            ],
            models: vec![
                ModelSpec::Mean,
                ModelSpec::Cfa(CfaConfig::default()),
                ModelSpec::Lstm(LstmConfig::default()),
            ],
            seeds: vec![0, 1, 2],
            data: SyntheticConfig::default(),
            n_train: 4000,
            train: TrainConfig::default(),
            metric: Metric::Mse,
            max_test_windows: None,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ranges.len() < 2 {
            return Err(Error::config("ranges", "at least two ranges are needed for a source/target pair"));
        }
        for (i, r) in self.ranges.iter().enumerate() {
            self.range_config(i).validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(format!("ranges[{i}] ({}): {field}", r.label()), reason),
                other => other,
            })?;
        }
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.n_train == 0 || self.n_train >= self.data.n_series {
            return Err(Error::config("n_train", format!("must lie in 1..{}", self.data.n_series)));
        }
        if self.max_test_windows == Some(0) {
            return Err(Error::config("max_test_windows", "must be at least 1"));
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

    fn range_config(&self, i: usize) -> SyntheticConfig {
        let r = self.ranges[i];
        SyntheticConfig {
            seed: sub_seed(self.data.seed, i as u64),
            ..self.data.clone()
        }
        .with_periods(r.0, r.1)
    }

    /// Source/target index pairs in report order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.ranges.len();
        (0..n).flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t))).collect()
    }
}

/// Outcome of training one (source, model, seed) and scoring it on every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub source: PeriodRange,
    pub model: String,
    pub seed: u64,
    /// Target label → metric value.
    #[serde(default)]
    pub results: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl UnitRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn key(&self) -> (String, String, u64) {
        (self.source.label(), self.model.clone(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: String,
    /// `None` when any seed of this cell failed.
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub source: PeriodRange,
    pub target: PeriodRange,
    pub cells: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub metric: Metric,
    pub models: Vec<String>,
    pub rows: Vec<GridRow>,
    pub meta: RunMeta,
}

impl GridReport {
    pub fn cell(&self, source: PeriodRange, target: PeriodRange, model: &str) -> Option<&GridCell> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.target == target)
            .and_then(|r| r.cells.iter().find(|c| c.model == model))
    }

    /// Mean metric of `model` on one row, if that cell succeeded.
    pub fn mean_of(row: &GridRow, model: &str) -> Option<f64> {
        row.cells
            .iter()
            .find(|c| c.model == model)
            .and_then(|c| c.summary.as_ref())
            .map(|s| s.mean)
    }

    fn has_std(&self) -> bool {
        self.meta.seeds.len() >= 2
    }

    /// One row per (source, target); per model a mean column and, with ≥2
    /// seeds, a std column. Failed cells read `failed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_range,target_range");
        for m in &self.models {
            let _ = write!(out, ",{}", csv_field(m));
            if self.has_std() {
                let _ = write!(out, ",{}_std", csv_field(m));
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.source.label(), row.target.label());
            for m in &self.models {
                match row.cells.iter().find(|c| &c.model == m).and_then(|c| c.summary.as_ref()) {
                    Some(s) => {
                        let _ = write!(out, ",{:.6}", s.mean);
                        if self.has_std() {
                            let _ = write!(out, ",{:.6}", s.std.unwrap_or(0.0));
                        }
                    }
                    None => {
                        out.push_str(",failed");
                        if self.has_std() {
                            out.push_str(",failed");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable table (`mean ± std`), for logs and the CLI.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:<10}", "source", "target");
        for m in &self.models {
            let _ = write!(out, " {m:>15}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<10} {:<10}", row.source.label(), row.target.label());
            for m in &self.models {
                let cell = row
                    .cells
                    .iter()
                    .find(|c| &c.model == m)
                    .and_then(|c| c.summary.as_ref())
                    .map(Summary::display)
                    .unwrap_or_else(|| "failed".into());
                let _ = write!(out, " {cell:>15}");
            }
            out.push('\n');
        }
        out
    }
}

/// Test split of every range (generated from the grid's data settings).
pub fn grid_datasets(cfg: &GridConfig, exec: Exec) -> Result<Vec<DatasetSplit>> {
    (0..cfg.ranges.len())
        .map(|i| {
            let dc = cfg.range_config(i);
            let mut split = split_synthetic(generate_synthetic_dataset_with(&dc, exec)?, cfg.n_train, dc.tau_c, dc.tau_f)?;
            if let Some(n) = cfg.max_test_windows {
                split.test.truncate(n);
            }
            Ok(split)
        })
        .collect()
}

fn run_unit(cfg: &GridConfig, data: &[DatasetSplit], source: usize, spec: &ModelSpec, seed: u64) -> UnitRecord {
    let mut rec = UnitRecord {
        source: cfg.ranges[source],
        model: spec.name().to_string(),
        seed,
        results: BTreeMap::new(),
        error: None,
    };
    let unit_seed = sub_seed(seed, source as u64);
    let outcome = (|| -> Result<BTreeMap<String, f64>> {
        let mut model = Model::new(&spec.with_init_seed(unit_seed))?;
        let tc = TrainConfig {
            seed: unit_seed,
            ..cfg.train.clone()
        };
        train(&mut model, std::slice::from_ref(&data[source]), &tc)?;
        let mut out = BTreeMap::new();
        for (t, split) in data.iter().enumerate() {
            if t != source {
                // units already run concurrently, so score sequentially
                out.insert(cfg.ranges[t].label(), evaluate(&model, split, cfg.metric, Exec::Sequential)?);
            }
        }
        Ok(out)
    })();
    match outcome {
        Ok(r) => rec.results = r,
        Err(e) => {
            warn!("grid unit {} {} seed {seed} failed: {e}", rec.source.label(), rec.model);
            rec.error = Some(e.to_string());
        }
    }
    rec
}

pub fn run_grid(cfg: &GridConfig, exec: Exec) -> Result<GridReport> {
    run_grid_resumable(cfg, exec, &[], &|_| {})
}

/// Runs the units missing from `completed` (failed units are retried) and
/// calls `on_unit` as each finishes, so a caller can persist progress.
pub fn run_grid_resumable(
    cfg: &GridConfig,
    exec: Exec,
    completed: &[UnitRecord],
    on_unit: &(dyn Fn(&UnitRecord) + Sync),
) -> Result<GridReport> {
    cfg.validate()?;
    let data = grid_datasets(cfg, exec)?;
    let mut units = Vec::new();
    for s in 0..cfg.ranges.len() {
        for spec in &cfg.models {
            for &seed in &cfg.seeds {
                units.push((s, spec, seed));
            }
        }
    }
    let done: BTreeMap<_, &UnitRecord> = completed.iter().filter(|u| !u.failed()).map(|u| (u.key(), u)).collect();
    info!("grid: {} units, {} already complete", units.len(), done.len());
    let records: Vec<UnitRecord> = exec.map_indexed(units.len(), |i| {
        let (s, spec, seed) = units[i];
        let key = (cfg.ranges[s].label(), spec.name().to_string(), seed);
        if let Some(r) = done.get(&key) {
            return (*r).clone();
        }
        let rec = run_unit(cfg, &data, s, spec, seed);
        on_unit(&rec);
        rec
    });
    Ok(assemble(cfg, &records))
}

fn assemble(cfg: &GridConfig, records: &[UnitRecord]) -> GridReport {
    let models: Vec<String> = cfg.models.iter().map(|m| m.name().to_string()).collect();
    let rows = cfg
        .pairs()
        .into_iter()
        .map(|(s, t)| {
            let (src, tgt) = (cfg.ranges[s], cfg.ranges[t]);
            let cells = models
                .iter()
                .map(|m| {
                    let values: Option<Vec<f64>> = cfg
                        .seeds
                        .iter()
                        .map(|&seed| {
                            records
                                .iter()
                                .find(|r| r.source == src && &r.model == m && r.seed == seed)
                                .and_then(|r| r.results.get(&tgt.label()).copied())
                        })
                        .collect();
                    GridCell {
                        model: m.clone(),
                        summary: values.map(Summary::from_values),
                    }
                })
                .collect();
            GridRow {
                source: src,
                target: tgt,
                cells,
            }
        })
        .collect();
    let mut meta = RunMeta::new(&cfg.seeds);
    meta.settings.insert("epochs".into(), cfg.train.epochs.to_string());
    meta.settings.insert("batch_size".into(), cfg.train.batch_size.to_string());
    meta.settings.insert("lambda".into(), cfg.train.lambda.to_string());
    GridReport {
        metric: cfg.metric,
        models,
        rows,
        meta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_ranges_give_twelve_ordered_pairs() {
        let cfg = GridConfig::default();
        let pairs = cfg.pairs();
        assert_eq!(pairs.len(), 12);
        assert!(pairs.iter().all(|(s, t)| s != t));
        let mut uniq = pairs.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 12);
    }

    #[test]
    fn range_flag_parses() {
        let r = parse_ranges("10:15,15:20").unwrap();
        assert_eq!(r, vec![PeriodRange(10.0, 15.0), PeriodRange(15.0, 20.0)]);
        assert!(parse_ranges("10-15").is_err());
    }

    #[test]
    fn csv_std_columns_only_with_several_seeds() {
        let cfg = GridConfig {
            ranges: vec![PeriodRange(10.0, 15.0), PeriodRange(15.0, 20.0)],
            models: vec![ModelSpec::Mean],
            seeds: vec![7],
            ..GridConfig::default()
        };
        let recs: Vec<UnitRecord> = cfg
            .ranges
            .iter()
            .enumerate()
            .map(|(i, r)| UnitRecord {
                source: *r,
                model: "mean".into(),
                seed: 7,
                results: [(cfg.ranges[1 - i].label(), 1.0)].into_iter().collect(),
                error: None,
            })
            .collect();
        let one = assemble(&cfg, &recs);
        assert_eq!(one.to_csv().lines().next().unwrap(), "source_range,target_range,mean");
        assert_eq!(one.rows.len(), 2);

        let mut failed = recs.clone();
        failed[0].results.clear();
        failed[0].error = Some("boom".into());
        let rep = assemble(&cfg, &failed);
        assert!(rep.to_csv().contains("failed"));
    }
}
