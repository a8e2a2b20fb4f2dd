//! Series and window types, the synthetic seasonal generator, dataset
//! splitting, expected-number window sampling and per-window scaling.

mod generator;
pub mod io;
mod sampler;
mod scale;
mod split;

pub use generator::{generate_synthetic_dataset, generate_synthetic_dataset_with, sine_series, sub_seed, SineParams, SyntheticConfig};
pub use sampler::{sample_training_batch, WindowSampler};
pub use scale::{scale_window, unscale_forecast, STD_FLOOR};
pub use split::{split_real, split_synthetic, DatasetSplit, SplitMeta};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One univariate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    #[serde(rename = "freq")]
    pub freq_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(rename = "target")]
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, freq_tag: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let ts = TimeSeries {
            id: id.into(),
            freq_tag: freq_tag.into(),
            start: None,
            values,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Dataset(format!("series {:?} is empty", self.id)));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "series {:?} has a non-finite value at index {i}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A (context, target) pair. The context is stored scaled, the target raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
    pub scale_mean: f64,
    pub scale_std: f64,
    pub series_id: String,
}

impl WindowSample {
    pub fn tau_c(&self) -> usize {
        self.context.len()
    }

    pub fn tau_f(&self) -> usize {
        self.target.len()
    }

    /// Target in the context's scaled units; this is what the training loss sees.
    pub fn scaled_target(&self) -> Vec<f64> {
        self.target
            .iter()
            .map(|y| (y - self.scale_mean) / self.scale_std)
            .collect()
    }

    /// Context mapped back to raw units.
    pub fn raw_context(&self) -> Vec<f64> {
        self.context
            .iter()
            .map(|x| x * self.scale_std + self.scale_mean)
            .collect()
    }
}
