mod common;

use std::collections::HashMap;

use common::{rng, short_split, uniform};
use freqcast::evaluation::{
    eval_mse, eval_nd, evaluate, forecast_period_check, invariance_probe, mse, nd, parse_ranges, probe_score, run_grid, run_real, run_real_all, write_forecast_csv,
    GridConfig, KeyDump, Metric, PeriodRange, ProbeConfig, RealConfig, SeasonalFixture, Summary,
};
use freqcast::evaluation::real::split_with_lengths;
use freqcast::exec::Exec;
use freqcast::models::{Forecaster, ModelSpec};
use freqcast::timeseries::{scale_window, DatasetSplit, SplitMeta, SyntheticConfig, WindowSample};
use freqcast::training::{BatchesPerEpoch, TrainConfig};
use freqcast::{Error, Result};
use proptest::prelude::*;
use rand::Rng;

/// Returns the true scaled target of any window it was built from.
struct Oracle(HashMap<Vec<u64>, Vec<f64>>);

impl Oracle {
    fn new(windows: &[WindowSample]) -> Self {
        Oracle(windows.iter().map(|w| (bits(&w.context), w.scaled_target())).collect())
    }
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl Forecaster for Oracle {
    fn forecast(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
        Ok(self.0[&bits(context)][..horizon].to_vec())
    }
}

struct Constant(f64);

impl Forecaster for Constant {
    fn forecast(&self, _: &[f64], horizon: usize) -> Result<Vec<f64>> {
        Ok(vec![self.0; horizon])
    }
}

fn toy_split(test: Vec<WindowSample>) -> DatasetSplit {
    DatasetSplit {
        train: Vec::new(),
        meta: SplitMeta {
            freq_tag: "toy".into(),
            tau_c: test[0].tau_c(),
            tau_f: test[0].tau_f(),
            skipped: Vec::new(),
        },
        test,
    }
}

#[test]
fn nd_worked_example_and_degenerate_cases() {
    let v = nd(&[1.0, 1.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((v - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(nd(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!(matches!(nd(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::UndefinedMetric(_))));
    assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
    assert!(mse(&[0.0], &[1.0, 3.0]).is_err());
}

proptest! {
    #[test]
    fn metric_scaling(seed in any::<u64>(), n in 1usize..40, e in -8i32..8, c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let p = uniform(&mut r, n, -5.0, 5.0);
        let t = uniform(&mut r, n, 0.5, 5.0);
        let scale = |x: &[f64], c: f64| x.iter().map(|v| v * c).collect::<Vec<_>>();
        // powers of two scale without rounding, so these hold exactly
        let c2 = 2f64.powi(e);
        prop_assert_eq!(nd(&scale(&p, c2), &scale(&t, c2)).unwrap(), nd(&p, &t).unwrap());
        prop_assert_eq!(mse(&scale(&p, c2), &scale(&t, c2)).unwrap(), c2 * c2 * mse(&p, &t).unwrap());
        let (a, b) = (nd(&scale(&p, c), &scale(&t, c)).unwrap(), nd(&p, &t).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        let (a, b) = (mse(&scale(&p, c), &scale(&t, c)).unwrap(), c * c * mse(&p, &t).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
    }
}

#[test]
fn two_window_hand_evaluation() {
    let w1 = scale_window(&[1.0, 3.0], &[5.0, 1.0], "a"); // mean 2, std 1
    let w2 = scale_window(&[0.0, 4.0, 0.0, 4.0], &[2.0, 6.0], "b"); // mean 2, std 2
    assert_eq!((w1.scale_mean, w1.scale_std, w2.scale_mean, w2.scale_std), (2.0, 1.0, 2.0, 2.0));
    let split = toy_split(vec![w1.clone(), w1.clone()]);
    // scaled targets [3, -1]; forecasting 1 gives errors 4 and 4
    assert_eq!(eval_mse(&Constant(1.0), &split, Exec::Sequential).unwrap(), 4.0);
    // unscaled forecast 3 vs [5, 1]: |2| + |2| per window over Σ|y| = 6
    assert!((eval_nd(&Constant(1.0), &split, Exec::Sequential).unwrap() - 8.0 / 12.0).abs() < 1e-15);

    // ND pools one numerator and one denominator over windows of differing scale
    let mut w2s = w2.clone();
    w2s.context = vec![-1.0, 1.0]; // keep tau_c equal to w1's
    let split = toy_split(vec![w1, w2s]);
    // unscaled forecast of 0: w1 → 2 vs [5, 1]; w2 → 2 vs [2, 6]
    let v = eval_nd(&Constant(0.0), &split, Exec::Sequential).unwrap();
    assert!((v - (3.0 + 1.0 + 0.0 + 4.0) / 14.0).abs() < 1e-15);
}

#[test]
fn oracle_and_mean_reference_levels() {
    let split = short_split(15.0, 20.0, 50, 3);
    let oracle = Oracle::new(&split.test);
    assert_eq!(eval_mse(&oracle, &split, Exec::Parallel).unwrap(), 0.0);
    assert!(eval_nd(&oracle, &split, Exec::Parallel).unwrap() < 1e-12);

    let mean = freqcast::models::Model::Mean;
    let got = eval_mse(&mean, &split, Exec::Parallel).unwrap();
    let n = (split.test.len() * split.tau_f()) as f64;
    let expected: f64 = split.test.iter().flat_map(|w| w.scaled_target()).map(|y| y * y).sum::<f64>() / n;
    assert!((got - expected).abs() < 1e-9);

    let check = forecast_period_check(&oracle, &split, Exec::Parallel).unwrap();
    assert_eq!(check.agreement, 1.0);
    let check = forecast_period_check(&mean, &split, Exec::Parallel).unwrap();
    assert_eq!(check.agreement, 0.0);
}

#[test]
fn evaluation_is_deterministic_across_modes() {
    let split = short_split(20.0, 25.0, 50, 4);
    let model = freqcast::models::Model::new(&ModelSpec::Lstm(Default::default())).unwrap();
    for metric in [Metric::Mse, Metric::Nd] {
        let a = evaluate(&model, &split, metric, Exec::Sequential).unwrap();
        let b = evaluate(&model, &split, metric, Exec::Parallel).unwrap();
        let c = evaluate(&model, &split, metric, Exec::Parallel).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs());
        assert_eq!(b, c);
    }
    let empty = DatasetSplit { test: Vec::new(), ..split };
    assert!(eval_mse(&model, &empty, Exec::Sequential).is_err());
}

#[test]
fn forecast_dump_is_unscaled() {
    let dir = tempfile::tempdir().unwrap();
    let w = scale_window(&[1.0, 3.0], &[5.0, 1.0], "s,1");
    let path = dir.path().join("f.csv");
    write_forecast_csv(&path, &[w], &[vec![0.5, -1.0]]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "series_id,step,y_true,y_pred\n\"s,1\",0,5.0,2.5\n\"s,1\",1,1.0,1.0\n");
}

#[test]
fn summary_reports_std_only_for_several_seeds() {
    let one = Summary::from_values(vec![0.5]);
    assert!(one.std.is_none());
    assert_eq!(one.display(), "0.500");
    let three = Summary::from_values(vec![1.0, 2.0, 3.0]);
    assert_eq!(three.mean, 2.0);
    assert_eq!(three.std, Some(1.0));
    let json = serde_json::to_value(&one).unwrap();
    assert!(json.get("std").is_none_or(|v| v.is_null()));
}

#[test]
fn grid_shape_and_completeness() {
    let ranges = parse_ranges("10:15,15:20,20:25,25:30").unwrap();
    let cfg = GridConfig { ranges, ..Default::default() };
    let pairs = cfg.pairs();
    assert_eq!(pairs.len(), 12);
    assert_eq!(pairs.len() * cfg.models.len() * cfg.seeds.len(), 108);
    let mut sorted = pairs.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 12);
    assert!(pairs.iter().all(|(s, t)| s != t));

    assert_eq!(parse_ranges("10:15,15:20").unwrap(), vec![PeriodRange(10.0, 15.0), PeriodRange(15.0, 20.0)]);
    assert!(parse_ranges("10-15").is_err());
}

fn tiny_grid(seeds: Vec<u64>) -> GridConfig {
    GridConfig {
        ranges: parse_ranges("10:15,15:20,20:25").unwrap(),
        models: vec![ModelSpec::Mean, ModelSpec::Lstm(freqcast::models::LstmConfig { hidden: 4, init_seed: 0 })],
        seeds,
        data: SyntheticConfig { n_series: 30, tau_c: 40, tau_f: 8, ..Default::default() },
        n_train: 20,
        train: TrainConfig { epochs: 1, n_batches_per_epoch: BatchesPerEpoch::Fixed(2), batch_size: 4, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn grid_runs_every_pair_once() {
    let report = run_grid(&tiny_grid(vec![0]), Exec::Parallel).unwrap();
    assert_eq!(report.rows.len(), 6);
    let csv = report.to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "source_range,target_range,mean,lstm");
    assert_eq!(csv.lines().count(), 7);
    for row in &report.rows {
        for cell in &row.cells {
            let s = cell.summary.as_ref().unwrap();
            assert!(s.mean.is_finite() && s.std.is_none());
        }
    }

    let report = run_grid(&tiny_grid(vec![0, 1]), Exec::Sequential).unwrap();
    assert!(report.to_csv().starts_with("source_range,target_range,mean,mean_std,lstm,lstm_std\n"));
    // the mean model has no parameters: identical across seeds
    for row in &report.rows {
        assert_eq!(row.cells[0].summary.as_ref().unwrap().std, Some(0.0));
    }
    let again = run_grid(&tiny_grid(vec![0, 1]), Exec::Parallel).unwrap();
    assert_eq!(again.to_csv(), report.to_csv());
}

#[test]
fn leave_one_out_over_four_datasets() {
    let data: Vec<(String, DatasetSplit)> = ["H", "D", "M", "Q"]
        .iter()
        .map(|tag| {
            let fx = SeasonalFixture::for_tag(tag, 6, 1).unwrap();
            (tag.to_string(), split_with_lengths(tag, fx.generate(), None, None).unwrap())
        })
        .collect();
    let train = TrainConfig { epochs: 1, n_batches_per_epoch: BatchesPerEpoch::Fixed(1), batch_size: 4, ..Default::default() };
    let models = [ModelSpec::Mean, ModelSpec::Lstm(freqcast::models::LstmConfig { hidden: 4, init_seed: 0 })];
    let mut runs = 0;
    for (name, _) in &data {
        let entries = run_real(name, &data, &models, &[0, 1, 2], &train, Metric::Nd, Exec::Parallel).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries[0].summary.std.unwrap() < 1e-12);
        assert!(entries.iter().all(|e| e.summary.mean.is_finite()));
        runs += 1;
    }
    assert_eq!(runs, 4);
    assert!(run_real("missing", &data, &models, &[0], &train, Metric::Nd, Exec::Sequential).is_err());

    // loaded data stands in for the configured file list
    let cfg = RealConfig { models: models.to_vec(), seeds: vec![0], train: train.clone(), ..RealConfig::default() };
    assert_eq!(run_real_all(&cfg, &data, Exec::Sequential).unwrap().entries.len(), 8);
    assert!(matches!(run_real_all(&cfg, &data[..1], Exec::Sequential), Err(Error::Config { .. })));
    let dup = vec![data[0].clone(), data[0].clone()];
    assert!(matches!(run_real_all(&cfg, &dup, Exec::Sequential), Err(Error::Config { .. })));
}

fn dump(features: impl Fn(f64, &mut rand_chacha::ChaCha8Rng) -> Vec<f64>) -> KeyDump {
    let mut r = rng(5);
    let periods: Vec<f64> = (0..300).map(|_| r.random_range(10.0..40.0)).collect();
    let feats = periods.iter().map(|&p| features(p, &mut r)).collect();
    KeyDump::new(feats, periods).unwrap()
}

#[test]
fn probe_reads_an_informative_coordinate() {
    let cfg = ProbeConfig { steps: 800, ..Default::default() };
    let informative = dump(|p, r| vec![r.random_range(-1.0..1.0), p / 40.0, r.random_range(-1.0..1.0)]);
    let s = probe_score(&informative, &cfg).unwrap();
    assert!(s.test_mse < 0.05 * s.label_variance, "{s:?}");
    assert!(s.n_train < s.n_test);
}

#[test]
fn probe_on_noise_sits_at_the_label_variance() {
    let cfg = ProbeConfig::default();
    let noise = dump(|_, r| (0..4).map(|_| r.random_range(-1.0..1.0)).collect());
    let s = probe_score(&noise, &cfg).unwrap();
    let rel = s.test_mse / s.label_variance;
    assert!(rel > 0.8, "{s:?}");
    assert!(s.n_train < s.n_test);

    let informative = dump(|p, _| vec![p / 40.0]);
    let report = invariance_probe(&noise, &informative, &cfg).unwrap();
    assert!(report.ratio > 10.0, "{report:?}");
}

#[test]
fn malformed_key_dumps_are_rejected() {
    assert!(KeyDump::parse("").is_err());
    assert!(KeyDump::parse("a,b,period\n1,2,3\n").is_err());
    assert!(KeyDump::parse("k0,k1,period\n1,2\n").is_err());
    assert!(KeyDump::parse("k0,period\nx,2\n").is_err());
    let ok = KeyDump::parse("k0,k1,period\n1,2,3\n4,5,6\n").unwrap();
    assert_eq!((ok.len(), ok.dim()), (2, 2));
}
