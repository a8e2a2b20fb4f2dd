use crate::error::{Error, Result};

/// Forecasts the context mean for every step.
pub fn mean_forecast(context: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::contract("mean forecast needs a non-empty context"));
    }
    let mean = context.iter().sum::<f64>() / context.len() as f64;
    Ok(vec![mean; horizon])
}
