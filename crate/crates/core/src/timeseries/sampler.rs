use rand::Rng;

use super::{scale_window, DatasetSplit, WindowSample};
use crate::error::{Error, Result};

/// Expected-number window sampler over a split's training regions.
///
/// A draw picks a series with probability proportional to its number of
/// valid window starts, then a uniform start within it. Equivalently, every
/// valid (series, start) position is equally likely, so an epoch of
/// `total_positions` draws visits each position once in expectation.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    /// `cumulative[i]` = number of valid positions in series `0..=i`.
    cumulative: Vec<usize>,
    tau_c: usize,
    tau_f: usize,
}

impl WindowSampler {
    pub fn new(split: &DatasetSplit) -> Result<Self> {
        let window = split.window_len();
        let mut total = 0usize;
        let cumulative = split
            .train
            .iter()
            .map(|s| {
                total += (s.len() + 1).saturating_sub(window);
                total
            })
            .collect();
        if total == 0 {
            return Err(Error::Dataset(format!(
                "no training window of length {window} fits in any series"
            )));
        }
        Ok(WindowSampler {
            cumulative,
            tau_c: split.tau_c(),
            tau_f: split.tau_f(),
        })
    }

    pub fn total_positions(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    /// `ceil(total_positions / batch_size)`.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.total_positions().div_ceil(batch_size.max(1))
    }

    /// Maps a flat position index to `(series index, window start)`.
    pub fn locate(&self, position: usize) -> (usize, usize) {
        let series = self.cumulative.partition_point(|&c| c <= position);
        let before = if series == 0 { 0 } else { self.cumulative[series - 1] };
        (series, position - before)
    }

    pub fn draw_position<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        self.locate(rng.random_range(0..self.total_positions()))
    }

    pub fn sample<R: Rng>(&self, split: &DatasetSplit, batch_size: usize, rng: &mut R) -> Vec<WindowSample> {
        (0..batch_size)
            .map(|_| {
                let (si, start) = self.draw_position(rng);
                let s = &split.train[si];
                scale_window(
                    &s.values[start..start + self.tau_c],
                    &s.values[start + self.tau_c..start + self.tau_c + self.tau_f],
                    &s.id,
                )
            })
            .collect()
    }
}

pub fn sample_training_batch<R: Rng>(split: &DatasetSplit, batch_size: usize, rng: &mut R) -> Result<Vec<WindowSample>> {
    Ok(WindowSampler::new(split)?.sample(split, batch_size, rng))
}
