use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Parameters of the noisy-sine generator. Periods are in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    pub noise_sigma: f64,
    pub n_series: usize,
    pub tau_c: usize,
    pub tau_f: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            p_min: 15.0,
            p_max: 20.0,
            amp_min: 0.5,
            amp_max: 2.0,
            noise_sigma: 0.2,
            n_series: 5000,
            tau_c: 120,
            tau_f: 24,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn with_periods(mut self, p_min: f64, p_max: f64) -> Self {
        self.p_min = p_min;
        self.p_max = p_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("p_min", self.p_min),
            ("p_max", self.p_max),
            ("amp_min", self.amp_min),
            ("amp_max", self.amp_max),
            ("noise_sigma", self.noise_sigma),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        if self.tau_c == 0 {
            return Err(Error::config("tau_c", "must be positive"));
        }
        if self.tau_f == 0 {
            return Err(Error::config("tau_f", "must be positive"));
        }
        if self.p_min <= 0.0 {
            return Err(Error::config("p_min", "must be positive"));
        }
        if self.p_min > self.p_max {
            return Err(Error::config("p_max", "must be >= p_min"));
        }
        if self.p_max > self.tau_c as f64 {
            return Err(Error::config("p_max", "must not exceed tau_c"));
        }
        if self.amp_min > self.amp_max {
            return Err(Error::config("amp_max", "must be >= amp_min"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        if self.n_series == 0 {
            return Err(Error::config("n_series", "must be at least 1"));
        }
        Ok(())
    }

    pub fn series_len(&self) -> usize {
        self.tau_c + self.tau_f
    }
}

/// Amplitude, period and phase of one generated sine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineParams {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

/// Derives a stream seed from a master seed and an index (splitmix64 finaliser).
pub fn sub_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `A·sin(2πt/P + φ) + ε_t` for `t = 0..len`, noise drawn from `rng`.
pub fn sine_series<R: Rng>(params: SineParams, len: usize, noise_sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("sigma checked"));
    (0..len)
        .map(|t| {
            let clean = params.amplitude * (2.0 * PI * t as f64 / params.period + params.phase).sin();
            match &noise {
                Some(n) => clean + n.sample(rng),
                None => clean,
            }
        })
        .collect()
}

fn one_series(cfg: &SyntheticConfig, index: usize) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, index as u64));
    let params = SineParams {
        phase: rng.random_range(0.0..2.0 * PI),
        period: rng.random_range(cfg.p_min..=cfg.p_max),
        amplitude: rng.random_range(cfg.amp_min..=cfg.amp_max),
    };
    let values = sine_series(params, cfg.series_len(), cfg.noise_sigma, &mut rng);
    TimeSeries {
        id: format!("synthetic-{index}"),
        freq_tag: "synthetic".into(),
        start: None,
        values,
    }
}

pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Vec<TimeSeries>> {
    generate_synthetic_dataset_with(cfg, Exec::default())
}

/// Each series draws from its own stream seeded by `sub_seed(seed, index)`,
/// so the output does not depend on the execution mode.
pub fn generate_synthetic_dataset_with(cfg: &SyntheticConfig, exec: Exec) -> Result<Vec<TimeSeries>> {
    cfg.validate()?;
    Ok(exec.map_indexed(cfg.n_series, |i| one_series(cfg, i)))
}
