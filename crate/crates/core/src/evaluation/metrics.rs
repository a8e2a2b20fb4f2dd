use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Forecaster;
use crate::timeseries::{unscale_forecast, DatasetSplit, WindowSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Mean squared error on scaled values.
    #[default]
    Mse,
    /// Normalised deviation on unscaled values.
    Nd,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Nd => "nd",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "nd" => Ok(Metric::Nd),
            other => Err(Error::config("metric", format!("unknown metric {other:?} (expected mse or nd)"))),
        }
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no values to score".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// `Σ|ŷ − y| / Σ|y|`.
pub fn nd(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let denom: f64 = truth.iter().map(|y| y.abs()).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("ND of an all-zero target".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / denom)
}

/// Autoregressive scaled forecasts for every window, in window order.
pub fn forecast_windows(model: &dyn Forecaster, windows: &[WindowSample], exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.map_slice(windows, |w| model.forecast(&w.context, w.tau_f()))
        .into_iter()
        .collect()
}

fn test_windows(split: &DatasetSplit) -> Result<&[WindowSample]> {
    if split.test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    Ok(&split.test)
}

/// MSE of scaled forecasts against scaled targets over all test windows and steps.
pub fn eval_mse(model: &dyn Forecaster, split: &DatasetSplit, exec: Exec) -> Result<f64> {
    let windows = test_windows(split)?;
    let sums: Vec<Result<(f64, usize)>> = exec.map_slice(windows, |w| {
        let f = model.forecast(&w.context, w.tau_f())?;
        let t = w.scaled_target();
        check_lengths(&f, &t)?;
        Ok((f.iter().zip(&t).map(|(p, y)| (p - y) * (p - y)).sum(), t.len()))
    });
    // reduce in window order so the result does not depend on scheduling
    let (mut total, mut count) = (0.0, 0usize);
    for s in sums {
        let (e, n) = s?;
        total += e;
        count += n;
    }
    Ok(total / count as f64)
}

/// ND of unscaled forecasts over all test windows and steps (one joint ratio).
pub fn eval_nd(model: &dyn Forecaster, split: &DatasetSplit, exec: Exec) -> Result<f64> {
    let windows = test_windows(split)?;
    let sums: Vec<Result<(f64, f64)>> = exec.map_slice(windows, |w| {
        let f = unscale_forecast(&model.forecast(&w.context, w.tau_f())?, w)?;
        Ok((
            f.iter().zip(&w.target).map(|(p, y)| (p - y).abs()).sum(),
            w.target.iter().map(|y| y.abs()).sum(),
        ))
    });
    let (mut num, mut den) = (0.0, 0.0);
    for s in sums {
        let (a, b) = s?;
        num += a;
        den += b;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("ND over all-zero test targets".into()));
    }
    Ok(num / den)
}

pub fn evaluate(model: &dyn Forecaster, split: &DatasetSplit, metric: Metric, exec: Exec) -> Result<f64> {
    match metric {
        Metric::Mse => eval_mse(model, split, exec),
        Metric::Nd => eval_nd(model, split, exec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nd_worked_example() {
        let v = nd(&[1.0, 1.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nd_zero_target_is_undefined() {
        assert!(matches!(nd(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("nd".parse::<Metric>().unwrap(), Metric::Nd);
        assert!("mae".parse::<Metric>().is_err());
    }
}
