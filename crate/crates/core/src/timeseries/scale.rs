use super::WindowSample;
use crate::error::{Error, Result};

/// Lower bound on the per-window standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Standardises a context by its own mean and population std (floored).
/// The target is kept in raw units; see [`WindowSample::scaled_target`].
pub fn scale_window(raw_context: &[f64], raw_target: &[f64], series_id: &str) -> WindowSample {
    let n = raw_context.len().max(1) as f64;
    let mean = raw_context.iter().sum::<f64>() / n;
    let var = raw_context.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    WindowSample {
        context: raw_context.iter().map(|x| (x - mean) / std).collect(),
        target: raw_target.to_vec(),
        scale_mean: mean,
        scale_std: std,
        series_id: series_id.to_string(),
    }
}

pub fn unscale_forecast(scaled_forecast: &[f64], sample: &WindowSample) -> Result<Vec<f64>> {
    if scaled_forecast.len() != sample.target.len() {
        return Err(Error::contract(format!(
            "forecast length {} does not match target length {}",
            scaled_forecast.len(),
            sample.target.len()
        )));
    }
    Ok(scaled_forecast
        .iter()
        .map(|z| z * sample.scale_std + sample.scale_mean)
        .collect())
}
