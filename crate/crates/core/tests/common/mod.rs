#![allow(dead_code)]

use freqcast::nnet::Tensor;
use freqcast::timeseries::{generate_synthetic_dataset, scale_window, split_synthetic, DatasetSplit, SyntheticConfig, WindowSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, uniform(rng, rows * cols, -1.0, 1.0))
}

/// Entries in `±[0.1, 1]` so kinked ops stay well away from their kink.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

pub fn sine(n: usize, period: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|t| amp * (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin())
        .collect()
}

/// Random windows of noisy sines with the given context and forecast lengths.
pub fn random_windows(seed: u64, n: usize, tau_c: usize, tau_f: usize) -> Vec<WindowSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let period = r.random_range(4.0..(tau_c as f64).max(5.0));
            let phase = r.random_range(0.0..6.0);
            let amp = r.random_range(0.5..2.0);
            let level = r.random_range(-1.0..1.0);
            let mut v = sine(tau_c + tau_f, period, amp, phase);
            for x in &mut v {
                *x += level + r.random_range(-0.1..0.1);
            }
            scale_window(&v[..tau_c], &v[tau_c..], &format!("w{i}"))
        })
        .collect()
}

/// Small synthetic split over a period range.
pub fn synthetic_split(p_min: f64, p_max: f64, n_series: usize, seed: u64) -> DatasetSplit {
    let cfg = SyntheticConfig {
        n_series,
        seed,
        ..SyntheticConfig::default().with_periods(p_min, p_max)
    };
    let series = generate_synthetic_dataset(&cfg).unwrap();
    split_synthetic(series, n_series * 4 / 5, cfg.tau_c, cfg.tau_f).unwrap()
}

/// Same generator with a shorter window, for fast training tests.
pub fn short_split(p_min: f64, p_max: f64, n_series: usize, seed: u64) -> DatasetSplit {
    let cfg = SyntheticConfig {
        n_series,
        seed,
        tau_c: 40,
        tau_f: 8,
        ..SyntheticConfig::default().with_periods(p_min, p_max)
    };
    let series = generate_synthetic_dataset(&cfg).unwrap();
    split_synthetic(series, n_series * 4 / 5, cfg.tau_c, cfg.tau_f).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}
