//! Frequency-invariant meta-forecasting.
//!
//! The crate provides a self-attention forecaster whose keys and queries are
//! trained adversarially against a discriminator that regresses the
//! FFT-derived dominant periods of the input window, plus LSTM and mean
//! baselines, a noisy-sine generator, and zero-shot evaluation tooling.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod models;
pub mod nnet;
pub mod spectral;
pub mod timeseries;
pub mod training;

pub use error::{Error, Result};
