use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::timeseries::io::fmt_number;
use crate::timeseries::{unscale_forecast, WindowSample};

/// Writes `series_id,step,y_true,y_pred` (unscaled) for every window and step.
pub fn write_forecast_csv(path: &Path, windows: &[WindowSample], scaled_forecasts: &[Vec<f64>]) -> Result<()> {
    if windows.len() != scaled_forecasts.len() {
        return Err(Error::contract(format!(
            "{} forecasts for {} windows",
            scaled_forecasts.len(),
            windows.len()
        )));
    }
    let mut out = String::from("series_id,step,y_true,y_pred\n");
    for (w, f) in windows.iter().zip(scaled_forecasts) {
        let pred = unscale_forecast(f, w)?;
        for (step, (y, p)) in w.target.iter().zip(&pred).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", csv_field(&w.series_id), step, fmt_number(*y), fmt_number(*p));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
