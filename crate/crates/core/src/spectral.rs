//! Continuous domain indices: DFT magnitudes of a window, the top-k periods
//! by magnitude, and their normalisation to `(0, 1]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes closer than this (relative) count as tied.
const TIE_RTOL: f64 = 1e-9;

/// Top-k normalised periods of a context window, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainIndex {
    pub periods_normalized: Vec<f64>,
}

impl DomainIndex {
    pub fn k(&self) -> usize {
        self.periods_normalized.len()
    }
}

/// `|DFT(window - mean)|` at bins `m = 1..=n/2`; element `m-1` holds bin `m`.
pub fn dft_magnitudes(window: &[f64]) -> Result<Vec<f64>> {
    let n = window.len();
    if n < 4 {
        return Err(Error::contract(format!("DFT window needs at least 4 samples, got {n}")));
    }
    if let Some(i) = window.iter().position(|x| !x.is_finite()) {
        return Err(Error::contract(format!("non-finite sample {} at index {i}", window[i])));
    }
    let mean = window.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = window.iter().map(|x| x - mean).collect();
    // twiddle[j] = exp(-2πi j/n); bin m at time t uses index (m·t) mod n.
    let twiddle: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / n as f64;
            (a.cos(), -a.sin())
        })
        .collect();
    Ok((1..=n / 2)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0usize;
            for &x in &centered {
                let (c, s) = twiddle[idx];
                re += x * c;
                im += x * s;
                idx += m;
                if idx >= n {
                    idx -= n;
                }
            }
            re.hypot(im)
        })
        .collect())
}

/// Bin numbers (1-indexed) of the `k` largest magnitudes, strongest first,
/// ties resolved toward the smaller bin.
pub fn top_k_bins(magnitudes: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > magnitudes.len() {
        return Err(Error::contract(format!(
            "k={k} must be in 1..={}",
            magnitudes.len()
        )));
    }
    let mut taken = vec![false; magnitudes.len()];
    let mut bins = Vec::with_capacity(k);
    for _ in 0..k {
        let best = magnitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(_, &m)| m)
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = best - TIE_RTOL * best.abs();
        let pick = (0..magnitudes.len())
            .find(|&i| !taken[i] && magnitudes[i] >= threshold)
            .expect("at least one bin remains");
        taken[pick] = true;
        bins.push(pick + 1);
    }
    Ok(bins)
}

/// Strongest bin (1-indexed).
pub fn argmax_bin(magnitudes: &[f64]) -> usize {
    top_k_bins(magnitudes, 1).map(|b| b[0]).unwrap_or(1)
}

/// Periods `n/m` of the `k` strongest bins.
pub fn top_k_periods(magnitudes: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    Ok(top_k_bins(magnitudes, k)?
        .into_iter()
        .map(|m| n as f64 / m as f64)
        .collect())
}

/// Top-k periods of `context` divided by its length; every entry is in `(0, 1]`.
pub fn domain_index(context: &[f64], k: usize) -> Result<DomainIndex> {
    let n = context.len();
    let mags = dft_magnitudes(context)?;
    let periods = top_k_periods(&mags, n, k)?;
    Ok(DomainIndex {
        periods_normalized: periods.into_iter().map(|p| p / n as f64).collect(),
    })
}
