use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Forecaster;
use crate::spectral::{argmax_bin, dft_magnitudes};
use crate::timeseries::DatasetSplit;

/// Fraction of test windows whose forecast and true continuation share a
/// dominant DFT bin (within the tolerance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCheckReport {
    pub agreement: f64,
    pub n_windows: usize,
    pub horizon: usize,
    pub tolerance_bins: usize,
    /// Windows whose target period exceeded `horizon / 1.5`; they were
    /// scored with one extra bin of tolerance.
    pub widened_windows: usize,
}

/// Magnitude below which a forecast counts as having no oscillation.
const FLAT_RTOL: f64 = 1e-9;

/// Dominant bin of `x`, or `None` when `x` is (numerically) flat.
pub fn dominant_bin(x: &[f64]) -> Result<Option<usize>> {
    let mags = dft_magnitudes(x)?;
    let scale = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if mags.iter().all(|m| *m <= FLAT_RTOL * scale) {
        return Ok(None);
    }
    Ok(Some(argmax_bin(&mags)))
}

pub fn forecast_period_check(model: &dyn Forecaster, split: &DatasetSplit, exec: Exec) -> Result<PeriodCheckReport> {
    if split.test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    let h = split.tau_f();
    if h < 4 {
        return Err(Error::contract(format!("horizon {h} too short for a spectral check (need at least 4)")));
    }
    let tolerance = 1;
    let outcomes: Vec<Result<(bool, bool)>> = exec.map_slice(&split.test, |w| {
        let f = model.forecast(&w.context, h)?;
        let truth = w.scaled_target();
        let Some(mt) = dominant_bin(&truth)? else {
            return Ok((false, false));
        };
        let widened = (h as f64) < 1.5 * (h as f64 / mt as f64);
        let tol = tolerance + usize::from(widened);
        let agree = match dominant_bin(&f)? {
            Some(mf) => mf.abs_diff(mt) <= tol,
            None => false,
        };
        Ok((agree, widened))
    });
    let mut agree = 0usize;
    let mut widened = 0usize;
    for o in outcomes {
        let (a, w) = o?;
        agree += usize::from(a);
        widened += usize::from(w);
    }
    if widened > 0 {
        warn!("{widened} windows have fewer than 1.5 periods in the {h}-step horizon; tolerance widened to {} bins for them", tolerance + 1);
    }
    Ok(PeriodCheckReport {
        agreement: agree as f64 / split.test.len() as f64,
        n_windows: split.test.len(),
        horizon: h,
        tolerance_bins: tolerance,
        widened_windows: widened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_series_has_no_dominant_bin() {
        assert_eq!(dominant_bin(&[0.3; 16]).unwrap(), None);
        let tone: Vec<f64> = (0..24).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 8.0).sin()).collect();
        assert_eq!(dominant_bin(&tone).unwrap(), Some(3));
    }
}
