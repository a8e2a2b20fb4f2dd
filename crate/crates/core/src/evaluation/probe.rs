//! Post-hoc probe: how well can a fresh MLP read the period back out of a
//! representation? A frequency-invariant representation makes this hard.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::PeriodRange;
use crate::error::{Error, Result};
use crate::nnet::{adam_step, Activation, AdamConfig, AdamState, GradMode, Graph, Group, Mlp, ParameterSet, Tensor};

/// Rows of a key-dump CSV (`k0..k{d-1},period`).
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDump {
    pub features: Vec<Vec<f64>>,
    pub periods: Vec<f64>,
}

impl KeyDump {
    pub fn new(features: Vec<Vec<f64>>, periods: Vec<f64>) -> Result<KeyDump> {
        if features.len() != periods.len() || features.is_empty() {
            return Err(Error::contract(format!(
                "{} feature rows for {} labels",
                features.len(),
                periods.len()
            )));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|r| r.len() != d) {
            return Err(Error::contract("feature rows must share a positive width"));
        }
        Ok(KeyDump { features, periods })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn read(path: &Path) -> Result<KeyDump> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<KeyDump, String> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').collect();
        let d = header.len().checked_sub(1).filter(|d| *d > 0).ok_or("header needs at least one key column")?;
        let expected: Vec<String> = (0..d).map(|i| format!("k{i}")).chain(["period".into()]).collect();
        if header != expected {
            return Err(format!("header must be k0..k{},period", d - 1));
        }
        let mut features = Vec::new();
        let mut periods = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("line {}: bad number {v:?}", i + 2)))
                .collect::<std::result::Result<_, _>>()?;
            if vals.len() != d + 1 || vals.iter().any(|v| !v.is_finite()) {
                return Err(format!("line {}: expected {} finite values", i + 2, d + 1));
            }
            periods.push(vals[d]);
            features.push(vals[..d].to_vec());
        }
        if features.is_empty() {
            return Err("no data rows".into());
        }
        Ok(KeyDump { features, periods })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Rows whose period lies in this range train the probe.
    pub source_range: PeriodRange,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            source_range: PeriodRange(10.0, 20.0),
            hidden: 32,
            steps: 400,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub train_mse: f64,
    /// Over all rows, source and target alike.
    pub test_mse: f64,
    /// Variance of the normalised labels over all rows (the no-information level).
    pub label_variance: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub a: ProbeScore,
    pub b: ProbeScore,
    /// `a.test_mse / b.test_mse`.
    pub ratio: f64,
}

/// Trains a fresh `[d, hidden, 1]` ReLU probe (full batch, Adam) on the
/// source rows of `dump` to regress `period / max period`; features are
/// standardised with the source-row statistics.
pub fn probe_score(dump: &KeyDump, cfg: &ProbeConfig) -> Result<ProbeScore> {
    let d = dump.dim();
    let max_p = dump.periods.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_p <= 0.0 {
        return Err(Error::contract("periods must be positive"));
    }
    let labels: Vec<f64> = dump.periods.iter().map(|p| p / max_p).collect();
    let PeriodRange(lo, hi) = cfg.source_range;
    let train_rows: Vec<usize> = (0..dump.len()).filter(|&i| (lo..=hi).contains(&dump.periods[i])).collect();
    if train_rows.len() < 2 {
        return Err(Error::Dataset(format!("fewer than two rows with periods in {lo}..={hi}")));
    }
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in &train_rows {
        for (m, x) in mean.iter_mut().zip(&dump.features[i]) {
            *m += x / train_rows.len() as f64;
        }
    }
    for &i in &train_rows {
        for ((s, m), x) in sd.iter_mut().zip(&mean).zip(&dump.features[i]) {
            *s += (x - m) * (x - m) / train_rows.len() as f64;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let standardise = |rows: &[usize]| -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend(dump.features[i].iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s));
        }
        Tensor::matrix(rows.len(), d, data)
    };
    let x_train = standardise(&train_rows);
    let y_train: Vec<f64> = train_rows.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut set = ParameterSet::new();
    let mlp = Mlp::new(&mut set, "probe", Group::Generative, &[d, cfg.hidden, 1], Activation::Relu, Activation::Identity, &mut rng);
    let mut state = AdamState::new(&set, Group::Generative);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut train_mse = f64::NAN;
    for _ in 0..cfg.steps {
        let mut g = Graph::new(GradMode::All);
        let x = g.input(x_train.clone());
        let y = mlp.forward(&mut g, &set, x)?;
        let loss = g.mse(y, &y_train)?;
        train_mse = g.value(loss).item();
        let grads = g.backward(loss).by_param(set.len());
        adam_step(&mut set, &grads, &mut state, &adam)?;
    }
    let all: Vec<usize> = (0..dump.len()).collect();
    let mut g = Graph::new(GradMode::Frozen);
    let x = g.input(standardise(&train_rows));
    let y = mlp.forward(&mut g, &set, x)?;
    let final_train = g.mse(y, &y_train)?;
    train_mse = if cfg.steps > 0 { g.value(final_train).item() } else { train_mse };
    let x = g.input(standardise(&all));
    let y = mlp.forward(&mut g, &set, x)?;
    let test = g.mse(y, &labels)?;
    let test_mse = g.value(test).item();
    let lm = labels.iter().sum::<f64>() / labels.len() as f64;
    let label_variance = labels.iter().map(|l| (l - lm) * (l - lm)).sum::<f64>() / labels.len() as f64;
    Ok(ProbeScore {
        train_mse,
        test_mse,
        label_variance,
        n_train: train_rows.len(),
        n_test: all.len(),
    })
}

pub fn invariance_probe(a: &KeyDump, b: &KeyDump, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let sa = probe_score(a, cfg)?;
    let sb = probe_score(b, cfg)?;
    let ratio = sa.test_mse / sb.test_mse;
    Ok(ProbeReport { a: sa, b: sb, ratio })
}
