//! Forecasters behind one interface: the frequency-adapting attention model,
//! the autoregressive LSTM baseline and the context-mean baseline.

pub mod cfa;
pub mod lstm;
mod mean;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cfa::{CfaConfig, CfaModel};
pub use lstm::{LstmConfig, LstmModel};
pub use mean::mean_forecast;

use crate::error::{Error, Result};
use crate::nnet::checkpoint;
use crate::nnet::{Graph, ParameterSet, Var};
use crate::spectral;
use crate::timeseries::WindowSample;

/// Anything that maps a scaled context to a scaled forecast of a given length.
pub trait Forecaster: Sync {
    fn forecast(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>>;
}

/// Declarative model description, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Mean,
    Lstm(LstmConfig),
    Cfa(CfaConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Mean => "mean",
            ModelSpec::Lstm(_) => "lstm",
            ModelSpec::Cfa(_) => "cfa",
        }
    }

    /// Same architecture with a different initialisation seed.
    pub fn with_init_seed(&self, seed: u64) -> ModelSpec {
        match self {
            ModelSpec::Mean => ModelSpec::Mean,
            ModelSpec::Lstm(c) => ModelSpec::Lstm(LstmConfig { init_seed: seed, ..c.clone() }),
            ModelSpec::Cfa(c) => ModelSpec::Cfa(CfaConfig { init_seed: seed, ..c.clone() }),
        }
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mean,
    Lstm(LstmModel),
    Cfa(CfaModel),
}

impl Model {
    pub fn new(spec: &ModelSpec) -> Result<Model> {
        Ok(match spec {
            ModelSpec::Mean => Model::Mean,
            ModelSpec::Lstm(c) => Model::Lstm(LstmModel::new(c.clone())?),
            ModelSpec::Cfa(c) => Model::Cfa(CfaModel::new(c.clone())?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Mean => ModelSpec::Mean,
            Model::Lstm(m) => ModelSpec::Lstm(m.cfg.clone()),
            Model::Cfa(m) => ModelSpec::Cfa(m.cfg.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        self.spec().name()
    }

    pub fn params(&self) -> Option<&ParameterSet> {
        match self {
            Model::Mean => None,
            Model::Lstm(m) => Some(&m.params),
            Model::Cfa(m) => Some(&m.params),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParameterSet> {
        match self {
            Model::Mean => None,
            Model::Lstm(m) => Some(&mut m.params),
            Model::Cfa(m) => Some(&mut m.params),
        }
    }

    /// Teacher-forced predictions (`None` for the parameter-free mean model).
    pub fn teacher_forced(&self, g: &mut Graph, batch: &[WindowSample]) -> Result<Option<Var>> {
        match self {
            Model::Mean => Ok(None),
            Model::Lstm(m) => m.teacher_forced(g, batch).map(Some),
            Model::Cfa(m) => m.teacher_forced(g, batch).map(|tf| Some(tf.predictions)),
        }
    }

    /// Fixed-size summary of a context: pooled keys (attention model) or the
    /// final hidden state (LSTM).
    pub fn representation(&self, context: &[f64]) -> Option<Vec<f64>> {
        match self {
            Model::Mean => None,
            Model::Lstm(m) => Some(m.final_hidden(context)),
            Model::Cfa(m) => Some(m.pooled_keys(context)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(self.spec()).map_err(|e| Error::json("model spec", e))?;
        let empty = ParameterSet::new();
        checkpoint::write_checkpoint(path, &meta, self.params().unwrap_or(&empty))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let (meta, set) = checkpoint::read_checkpoint(path)?;
        let spec: ModelSpec = serde_json::from_value(meta).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("model description: {e}"),
        })?;
        let mut model = Model::new(&spec)?;
        if let Some(p) = model.params_mut() {
            p.load_from(&set).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        } else if !set.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "mean model checkpoint carries parameters".into(),
            });
        }
        Ok(model)
    }
}

impl Forecaster for Model {
    fn forecast(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
        let out = match self {
            Model::Mean => mean_forecast(context, horizon)?,
            Model::Lstm(m) => m.forecast(context, horizon)?,
            Model::Cfa(m) => m.forecast(context, horizon)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("{} produced a non-finite forecast", self.name())));
        }
        Ok(out)
    }
}

/// Dominant DFT period (in samples) of a window, used as the key-dump label.
pub fn dominant_period(window: &[f64]) -> Result<f64> {
    let mags = spectral::dft_magnitudes(window)?;
    Ok(spectral::top_k_periods(&mags, window.len(), 1)?[0])
}

/// Writes one row per window: the model's representation of its context
/// (`k0..k{d-1}`) and the context's dominant period.
pub fn export_keys(model: &Model, windows: &[WindowSample], path: &Path) -> Result<usize> {
    let rows: Vec<(Vec<f64>, f64)> = crate::exec::Exec::default()
        .map_slice(windows, |w| -> Result<(Vec<f64>, f64)> {
            let rep = model
                .representation(&w.context)
                .ok_or_else(|| Error::contract(format!("{} model has no representation to export", model.name())))?;
            Ok((rep, dominant_period(&w.context)?))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let d = rows.first().map(|r| r.0.len()).unwrap_or(0);
    let mut out = String::new();
    let header: Vec<String> = (0..d).map(|i| format!("k{i}")).chain(["period".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (rep, period) in &rows {
        for v in rep {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{period}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}
