use log::warn;
use serde::{Deserialize, Serialize};

use super::{scale_window, TimeSeries, WindowSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub freq_tag: String,
    pub tau_c: usize,
    pub tau_f: usize,
    /// Ids of series dropped because they were shorter than `tau_c + tau_f`.
    #[serde(default)]
    pub skipped: Vec<String>,
}

/// Training regions plus scaled test windows for one dataset.
///
/// `train` holds the raw series (or series prefixes) that training windows
/// are cut from; `test` never overlaps them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TimeSeries>,
    pub test: Vec<WindowSample>,
    pub meta: SplitMeta,
}

impl DatasetSplit {
    pub fn tau_c(&self) -> usize {
        self.meta.tau_c
    }

    pub fn tau_f(&self) -> usize {
        self.meta.tau_f
    }

    pub fn window_len(&self) -> usize {
        self.meta.tau_c + self.meta.tau_f
    }
}

fn window_of(series: &TimeSeries, start: usize, tau_c: usize, tau_f: usize) -> WindowSample {
    let ctx = &series.values[start..start + tau_c];
    let tgt = &series.values[start + tau_c..start + tau_c + tau_f];
    scale_window(ctx, tgt, &series.id)
}

/// First `n_train` series form the training pool, the rest become one test
/// window each (a synthetic series is exactly one context plus one forecast).
pub fn split_synthetic(series: Vec<TimeSeries>, n_train: usize, tau_c: usize, tau_f: usize) -> Result<DatasetSplit> {
    if n_train >= series.len() {
        return Err(Error::config(
            "n_train",
            format!("must be smaller than the number of series ({})", series.len()),
        ));
    }
    if tau_c == 0 || tau_f == 0 {
        return Err(Error::config("tau_c/tau_f", "must be positive"));
    }
    let freq_tag = series[0].freq_tag.clone();
    let mut train = series;
    let rest = train.split_off(n_train);
    let mut test = Vec::with_capacity(rest.len());
    for s in &rest {
        if s.len() < tau_c + tau_f {
            return Err(Error::Dataset(format!(
                "series {:?} has length {}, need {}",
                s.id,
                s.len(),
                tau_c + tau_f
            )));
        }
        test.push(window_of(s, 0, tau_c, tau_f));
    }
    Ok(DatasetSplit {
        train,
        test,
        meta: SplitMeta {
            freq_tag,
            tau_c,
            tau_f,
            skipped: Vec::new(),
        },
    })
}

/// Splits each series by time: its final `tau_f` values are the test target
/// (preceded by `tau_c` context values); everything before the final `tau_f`
/// values is the training region. Series shorter than `tau_c + tau_f` are
/// skipped and listed in `meta.skipped`.
pub fn split_real(series: Vec<TimeSeries>, tau_c: usize, tau_f: usize) -> Result<DatasetSplit> {
    if tau_c == 0 || tau_f == 0 {
        return Err(Error::config("tau_c/tau_f", "must be positive"));
    }
    let freq_tag = series.first().map(|s| s.freq_tag.clone()).unwrap_or_default();
    let mut train = Vec::with_capacity(series.len());
    let mut test = Vec::with_capacity(series.len());
    let mut skipped = Vec::new();
    for s in series {
        let n = s.len();
        if n < tau_c + tau_f {
            warn!("skipping series {:?}: length {n} < {}", s.id, tau_c + tau_f);
            skipped.push(s.id);
            continue;
        }
        test.push(window_of(&s, n - tau_c - tau_f, tau_c, tau_f));
        let mut region = s;
        region.values.truncate(n - tau_f);
        train.push(region);
    }
    if test.is_empty() {
        return Err(Error::Dataset(format!(
            "no series long enough for tau_c={tau_c}, tau_f={tau_f}"
        )));
    }
    Ok(DatasetSplit {
        train,
        test,
        meta: SplitMeta {
            freq_tag,
            tau_c,
            tau_f,
            skipped,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, n: usize) -> TimeSeries {
        TimeSeries::new(id, "H", (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn synthetic_counts() {
        let series: Vec<_> = (0..5000).map(|i| ramp(&i.to_string(), 144)).collect();
        let split = split_synthetic(series, 4000, 120, 24).unwrap();
        assert_eq!(split.train.len(), 4000);
        assert_eq!(split.test.len(), 1000);
        assert_eq!(split.test[0].series_id, "4000");

        let two = vec![ramp("a", 144), ramp("b", 144)];
        let split = split_synthetic(two, 1, 120, 24).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (1, 1));
    }

    #[test]
    fn synthetic_rejects_empty_test() {
        let series: Vec<_> = (0..5).map(|i| ramp(&i.to_string(), 144)).collect();
        assert!(matches!(split_synthetic(series, 5, 120, 24), Err(Error::Config { .. })));
    }

    #[test]
    fn real_split_indices() {
        let split = split_real(vec![ramp("a", 200)], 120, 24).unwrap();
        let w = &split.test[0];
        let expect_ctx: Vec<f64> = (56..176).map(|i| i as f64).collect();
        let expect_tgt: Vec<f64> = (176..200).map(|i| i as f64).collect();
        assert_eq!(w.raw_context().len(), 120);
        for (a, b) in w.raw_context().iter().zip(&expect_ctx) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(w.target, expect_tgt);
        assert_eq!(split.train[0].values.len(), 176);
    }

    #[test]
    fn real_split_with_room_for_padding() {
        // 204 values: test context is values[60..180], target values[180..204].
        let split = split_real(vec![ramp("a", 204)], 120, 24).unwrap();
        assert_eq!(split.test[0].target[0], 180.0);
        assert!((split.test[0].raw_context()[0] - 60.0).abs() < 1e-9);
    }

    #[test]
    fn short_series_skipped() {
        let split = split_real(vec![ramp("short", 143), ramp("ok", 144)], 120, 24).unwrap();
        assert_eq!(split.meta.skipped, vec!["short".to_string()]);
        assert_eq!(split.test.len(), 1);
        assert!(matches!(split_real(vec![ramp("short", 143)], 120, 24), Err(Error::Dataset(_))));
    }

    #[test]
    fn monthly_fixture_count() {
        let series: Vec<_> = (0..366).map(|i| ramp(&format!("m{i}"), 48 + i % 30)).collect();
        let split = split_real(series, 36, 12).unwrap();
        assert_eq!(split.test.len(), 366);
    }

    #[test]
    fn no_leakage_into_training_region() {
        let series: Vec<_> = (0..20).map(|i| ramp(&format!("s{i}"), 150 + i * 7)).collect();
        let lens: Vec<usize> = series.iter().map(|s| s.len()).collect();
        let split = split_real(series, 120, 24).unwrap();
        for (region, n) in split.train.iter().zip(lens) {
            // Every training window lies inside the region, which ends where the test target starts.
            assert_eq!(region.values.len(), n - 24);
            assert_eq!(*region.values.last().unwrap(), (n - 25) as f64);
        }
    }
}
