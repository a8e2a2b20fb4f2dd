//! `freqcast` command line: `synth`, `train`, `eval`, `grid`, `probe`.
//!
//! Machine artifacts go to files under `--out`; logs go to stderr.
//! Exit codes: 0 ok, 2 configuration, 3 training fault, 4 evaluation fault,
//! 1 anything else.

pub mod config;

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use crate::error::{Error, Result};
use crate::evaluation::{
    forecast_windows, grid, invariance_probe, run_grid_resumable, write_forecast_csv, EvalEntry, EvalReport, GridConfig, KeyDump, Metric,
    RunMeta, Summary, UnitRecord,
};
use crate::exec::{with_jobs, Exec};
use crate::models::{export_keys, Model};
use crate::timeseries::generate_synthetic_dataset;
use crate::timeseries::io::write_jsonl;
use crate::training::train;
use config::{base_dir, load, EvalCommand, ProbeCommand, SynthCommand, TrainCommand};

#[derive(Debug, Parser)]
#[command(name = "freqcast", version, about = "Zero-shot frequency generalization for seasonal forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Replace existing outputs instead of refusing to run.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sine dataset (train/test JSON Lines + manifest).
    Synth(Common),
    /// Train a model on one or more source datasets.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint (its model must match the config).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Zero-shot evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<Metric>,
        /// Also write the per-window representation dump (keys.csv).
        #[arg(long)]
        dump_keys: bool,
    },
    /// Source-range × target-range grid on synthetic data (resumable).
    Grid {
        #[command(flatten)]
        common: Common,
        /// Period ranges, e.g. `10:15,15:20`.
        #[arg(long)]
        ranges: Option<String>,
    },
    /// Period-regression probe on two representation dumps.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, jobs) = match &cli.command {
        Command::Synth(c) => (Kind::Other, c.jobs),
        Command::Train { common, .. } => (Kind::Train, common.jobs),
        Command::Eval { common, .. } => (Kind::Eval, common.jobs),
        Command::Grid { common, .. } => (Kind::Other, common.jobs),
        Command::Probe { common, .. } => (Kind::Eval, common.jobs),
    };
    match with_jobs(jobs, || dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(kind, &e)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Train,
    Eval,
    Other,
}

fn exit_code(kind: Kind, e: &Error) -> i32 {
    match (e, kind) {
        (Error::Config { .. }, _) => 2,
        (Error::TrainingFault { .. }, _) => 3,
        (_, Kind::Eval) | (Error::UndefinedMetric(_), _) => 4,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => synth(&c),
        Command::Train { common, resume } => train_cmd(&common, resume.as_deref()),
        Command::Eval { common, metric, dump_keys } => eval_cmd(&common, metric, dump_keys),
        Command::Grid { common, ranges } => grid_cmd(&common, ranges.as_deref()),
        Command::Probe { common, a, b } => probe_cmd(&common, a, b),
    }
}

fn require_config(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| Error::config("--config", "this command needs a configuration file"))
}

/// Creates the output directory and refuses to clobber existing outputs
/// unless `--overwrite` was given.
fn prepare_out(c: &Common, files: &[&str]) -> Result<()> {
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    if !c.overwrite {
        if let Some(f) = files.iter().map(|f| c.out.join(f)).find(|p| p.exists()) {
            return Err(Error::config(
                "--out",
                format!("{} exists; pass --overwrite to replace it", f.display()),
            ));
        }
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(c: &Common) -> Result<()> {
    let mut cfg: SynthCommand = match &c.config {
        Some(p) => load(p)?,
        None => SynthCommand::default(),
    };
    if let Some(s) = c.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    prepare_out(c, &["train.jsonl", "test.jsonl", "manifest.json"])?;
    let series = generate_synthetic_dataset(&cfg.data)?;
    let n_train = cfg.n_train();
    write_jsonl(&c.out.join("train.jsonl"), &series[..n_train])?;
    write_jsonl(&c.out.join("test.jsonl"), &series[n_train..])?;
    let manifest = serde_json::json!({
        "generator": cfg.data,
        "n_train": n_train,
        "n_test": series.len() - n_train,
        "files": { "train": "train.jsonl", "test": "test.jsonl" },
        "layout": "windows",
        "tau_c": cfg.data.tau_c,
        "tau_f": cfg.data.tau_f,
    });
    write_json(&c.out.join("manifest.json"), &manifest)?;
    info!("wrote {n_train} train and {} test series to {}", series.len() - n_train, c.out.display());
    Ok(())
}

fn train_cmd(c: &Common, resume: Option<&Path>) -> Result<()> {
    let path = require_config(c)?;
    let mut cfg: TrainCommand = load(path)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.model = cfg.model.with_init_seed(s);
    }
    cfg.validate()?;
    let base = base_dir(Some(path));
    let specs = cfg
        .sources
        .iter()
        .enumerate()
        .map(|(i, d)| d.resolve(&base, &format!("sources[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let mut model = match resume {
        Some(ckpt) => {
            let m = Model::load(ckpt)?;
            if m.spec() != cfg.model {
                return Err(Error::config(
                    "--resume",
                    format!("checkpoint {} holds a different model than the config", ckpt.display()),
                ));
            }
            m
        }
        None => Model::new(&cfg.model)?,
    };
    prepare_out(c, &["model.ckpt", "history.json"])?;
    let sources = specs.iter().map(|d| d.load()).collect::<Result<Vec<_>>>()?;
    let history = train(&mut model, &sources, &cfg.train)?;
    model.save(&c.out.join("model.ckpt"))?;
    write_json(&c.out.join("history.json"), &history)?;
    info!("trained {} for {} epochs; artifacts in {}", model.name(), history.epochs.len(), c.out.display());
    Ok(())
}

fn eval_cmd(c: &Common, metric: Option<Metric>, dump_keys: bool) -> Result<()> {
    let path = require_config(c)?;
    let mut cfg: EvalCommand = load(path)?;
    if let Some(m) = metric {
        cfg.metric = m;
    }
    let base = base_dir(Some(path));
    let data = cfg.data.resolve(&base, "data")?;
    let ckpt = base.join(&cfg.checkpoint);
    if !ckpt.is_file() {
        return Err(Error::Dataset(format!("checkpoint {} not found", ckpt.display())));
    }
    let mut files = vec!["report.json", "forecasts.csv"];
    if dump_keys {
        files.push("keys.csv");
    }
    prepare_out(c, &files)?;
    let model = Model::load(&ckpt)?;
    let mut split = data.load()?;
    if let Some(n) = cfg.max_windows {
        split.test.truncate(n);
    }
    let forecasts = forecast_windows(&model, &split.test, Exec::Parallel)?;
    let value = score(&split.test, &forecasts, cfg.metric)?;
    write_forecast_csv(&c.out.join("forecasts.csv"), &split.test, &forecasts)?;
    if dump_keys {
        let n = export_keys(&model, &split.test, &c.out.join("keys.csv"))?;
        info!("dumped {n} representations");
    }
    let mut meta = RunMeta::new(&[]);
    meta.settings.insert("checkpoint".into(), ckpt.display().to_string());
    meta.settings.insert("windows".into(), split.test.len().to_string());
    let report = EvalReport {
        entries: vec![EvalEntry {
            dataset: data.name(),
            model: model.name().to_string(),
            metric: cfg.metric,
            summary: Summary::from_values(vec![value]),
        }],
        meta,
    };
    write_json(&c.out.join("report.json"), &report)?;
    info!("{} {} = {value:.6}", model.name(), cfg.metric.name());
    Ok(())
}

/// Metric from already computed scaled forecasts.
fn score(windows: &[crate::timeseries::WindowSample], forecasts: &[Vec<f64>], metric: Metric) -> Result<f64> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (w, f) in windows.iter().zip(forecasts) {
        match metric {
            Metric::Mse => {
                pred.extend_from_slice(f);
                truth.extend(w.scaled_target());
            }
            Metric::Nd => {
                pred.extend(crate::timeseries::unscale_forecast(f, w)?);
                truth.extend_from_slice(&w.target);
            }
        }
    }
    match metric {
        Metric::Mse => crate::evaluation::mse(&pred, &truth),
        Metric::Nd => crate::evaluation::nd(&pred, &truth),
    }
}

const GRID_PROGRESS: &str = "grid_progress.jsonl";
const GRID_CONFIG: &str = "grid_config.json";

fn grid_cmd(c: &Common, ranges: Option<&str>) -> Result<()> {
    let mut cfg: GridConfig = match &c.config {
        Some(p) => load(p)?,
        None => GridConfig::default(),
    };
    if let Some(r) = ranges {
        cfg.ranges = grid::parse_ranges(r)?;
    }
    if let Some(s) = c.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let progress = c.out.join(GRID_PROGRESS);
    let cfg_path = c.out.join(GRID_CONFIG);
    let cfg_json = serde_json::to_string_pretty(&cfg).map_err(|e| Error::json("grid config", e))? + "\n";
    let mut completed = Vec::new();
    if c.overwrite {
        for f in [&progress, &cfg_path, &c.out.join("grid.csv"), &c.out.join("grid.json")] {
            if f.exists() {
                fs::remove_file(f).map_err(|e| Error::io(f, e))?;
            }
        }
    } else if progress.exists() {
        let previous = fs::read_to_string(&cfg_path).unwrap_or_default();
        if previous != cfg_json {
            return Err(Error::config(
                "--config",
                format!("{} was produced by a different grid configuration; pass --overwrite to restart", progress.display()),
            ));
        }
        completed = read_progress(&progress)?;
        info!("resuming: {} units recorded", completed.len());
    } else if c.out.join("grid.csv").exists() {
        return Err(Error::config("--out", "grid results exist; pass --overwrite to replace them"));
    }
    fs::write(&cfg_path, &cfg_json).map_err(|e| Error::io(&cfg_path, e))?;
    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&progress)
            .map_err(|e| Error::io(&progress, e))?,
    );
    let record = |u: &UnitRecord| {
        let line = serde_json::to_string(u).expect("unit record serialises");
        let mut f = sink.lock().expect("progress lock");
        if let Err(e) = writeln!(f, "{line}") {
            warn!("could not record progress: {e}");
        }
    };
    let report = run_grid_resumable(&cfg, Exec::Parallel, &completed, &record)?;
    fs::write(c.out.join("grid.csv"), report.to_csv()).map_err(|e| Error::io(c.out.join("grid.csv"), e))?;
    write_json(&c.out.join("grid.json"), &report)?;
    eprintln!("{}", report.to_table());
    Ok(())
}

fn read_progress(path: &Path) -> Result<Vec<UnitRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<UnitRecord>(line) {
            Ok(u) => out.push(u),
            // a line cut short by an interruption is simply rerun
            Err(e) => warn!("{}:{}: ignoring unreadable progress line: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn probe_cmd(c: &Common, a: Option<PathBuf>, b: Option<PathBuf>) -> Result<()> {
    let (mut cfg, base) = match &c.config {
        Some(p) => (load::<ProbeCommand>(p)?, base_dir(Some(p))),
        None => {
            let need = |v: Option<PathBuf>, f: &str| v.ok_or_else(|| Error::config(f, "required without --config"));
            let cmd = ProbeCommand {
                a: need(a.clone(), "--a")?,
                b: need(b.clone(), "--b")?,
                probe: Default::default(),
            };
            (cmd, PathBuf::new())
        }
    };
    if let Some(a) = a {
        cfg.a = a;
    }
    if let Some(b) = b {
        cfg.b = b;
    }
    if let Some(s) = c.seed {
        cfg.probe.seed = s;
    }
    prepare_out(c, &["probe.json"])?;
    let da = KeyDump::read(&base.join(&cfg.a))?;
    let db = KeyDump::read(&base.join(&cfg.b))?;
    let report = invariance_probe(&da, &db, &cfg.probe)?;
    write_json(&c.out.join("probe.json"), &report)?;
    info!(
        "probe test mse: a={:.5} b={:.5} ratio={:.3}",
        report.a.test_mse, report.b.test_mse, report.ratio
    );
    Ok(())
}
