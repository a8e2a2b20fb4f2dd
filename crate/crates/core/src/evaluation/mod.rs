//! Zero-shot evaluation: metrics, the synthetic range grid, leave-one-out
//! runs on dataset files, the representation probe and the forecast
//! periodicity check.

mod dump;
pub mod grid;
mod metrics;
mod periodicity;
pub mod probe;
pub mod real;
mod report;

pub use dump::write_forecast_csv;
pub use grid::{parse_ranges, run_grid, run_grid_resumable, GridConfig, GridReport, PeriodRange, UnitRecord};
pub use metrics::{eval_mse, eval_nd, evaluate, forecast_windows, mse, nd, Metric};
pub use periodicity::{dominant_bin, forecast_period_check, PeriodCheckReport};
pub use probe::{invariance_probe, probe_score, KeyDump, ProbeConfig, ProbeReport, ProbeScore};
pub use real::{run_real, run_real_all, RealConfig, RealDataset, SeasonalFixture};
pub use report::{EvalEntry, EvalReport, RunMeta, Summary};
