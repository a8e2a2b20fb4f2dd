//! Multi-source training.
//!
//! [`train_cfa`] alternates two updates per iteration: the generative group
//! minimises `Σ_j L_f(j) − λ·L_d(j)` with the discriminator frozen, then the
//! discriminator minimises `Σ_j L_d(j)` against the FFT-derived labels with
//! the generative group frozen. [`train_baseline`] runs the same batch
//! schedule with the forecasting loss only.

use std::fmt;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::models::{CfaModel, Model};
use crate::nnet::{adam_step, AdamConfig, AdamState, GradMode, Graph, Group, Tensor, Var};
use crate::spectral;
use crate::timeseries::{sub_seed, DatasetSplit, WindowSample, WindowSampler};

/// Iterations per epoch: `Auto` uses `max_j ceil(positions_j / batch_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchesPerEpoch {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for BatchesPerEpoch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchesPerEpoch::Auto => s.serialize_str("auto"),
            BatchesPerEpoch::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchesPerEpoch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(BatchesPerEpoch::Fixed(n)),
            Raw::Word(w) if w == "auto" => Ok(BatchesPerEpoch::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected \"auto\" or a count, got {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastLoss {
    /// Mean squared error on scaled targets.
    #[default]
    Mse,
    /// Normalised deviation on unscaled values.
    Nd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub n_batches_per_epoch: BatchesPerEpoch,
    pub batch_size: usize,
    pub gen_optimizer: AdamConfig,
    pub disc_optimizer: AdamConfig,
    pub seed: u64,
    /// Number of FFT periods used as discriminator labels.
    pub k: usize,
    pub loss: ForecastLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            epochs: 4,
            n_batches_per_epoch: BatchesPerEpoch::Auto,
            batch_size: 32,
            gen_optimizer: AdamConfig::default(),
            disc_optimizer: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 0,
            k: 1,
            loss: ForecastLoss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if let BatchesPerEpoch::Fixed(0) = self.n_batches_per_epoch {
            return Err(Error::config("n_batches_per_epoch", "must be at least 1"));
        }
        for (field, opt) in [("gen_optimizer", &self.gen_optimizer), ("disc_optimizer", &self.disc_optimizer)] {
            if !(opt.lr > 0.0 && opt.lr.is_finite()) {
                return Err(Error::config(format!("{field}.lr"), "must be positive"));
            }
            if !(0.0..1.0).contains(&opt.beta1) || !(0.0..1.0).contains(&opt.beta2) {
                return Err(Error::config(format!("{field}.betas"), "must lie in [0, 1)"));
            }
            if opt.eps <= 0.0 {
                return Err(Error::config(format!("{field}.eps"), "must be positive"));
            }
        }
        Ok(())
    }
}

/// Mean losses of one source over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceLosses {
    pub source: String,
    pub generative_loss: f64,
    pub forecast_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sources: Vec<SourceLosses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub model: String,
    pub lambda: f64,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Forecast loss of one epoch summed over sources.
    pub fn forecast_losses(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .map(|e| e.sources.iter().map(|s| s.forecast_loss).sum())
            .collect()
    }

    pub fn discriminator_losses(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .map(|e| e.sources.iter().filter_map(|s| s.discriminator_loss).sum())
            .collect()
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.epochs {
            write!(f, "epoch {}:", e.epoch)?;
            for s in &e.sources {
                write!(f, " [{} Lf={:.4}", s.source, s.forecast_loss)?;
                if let Some(d) = s.discriminator_loss {
                    write!(f, " Ld={d:.5}")?;
                }
                write!(f, "]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Per-source sampler and RNG stream.
struct SourceStream<'a> {
    split: &'a DatasetSplit,
    sampler: WindowSampler,
    rng: ChaCha8Rng,
}

fn source_streams<'a>(sources: &'a [DatasetSplit], cfg: &TrainConfig) -> Result<Vec<SourceStream<'a>>> {
    if sources.is_empty() {
        return Err(Error::config("sources", "at least one source dataset is required"));
    }
    sources
        .iter()
        .enumerate()
        .map(|(j, split)| {
            Ok(SourceStream {
                split,
                sampler: WindowSampler::new(split)?,
                rng: ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, j as u64)),
            })
        })
        .collect()
}

fn iterations_per_epoch(streams: &[SourceStream<'_>], cfg: &TrainConfig) -> usize {
    match cfg.n_batches_per_epoch {
        BatchesPerEpoch::Fixed(n) => n,
        BatchesPerEpoch::Auto => streams
            .iter()
            .map(|s| s.sampler.batches_per_epoch(cfg.batch_size))
            .max()
            .unwrap_or(1),
    }
}

fn source_name(split: &DatasetSplit, j: usize) -> String {
    format!("{j}:{}", split.meta.freq_tag)
}

/// Forecasting loss of teacher-forced predictions (`[batch·tau_f]`, window-major).
pub fn forecast_loss(g: &mut Graph, predictions: Var, batch: &[WindowSample], loss: ForecastLoss) -> Result<Var> {
    let targets: Vec<f64> = batch.iter().flat_map(|w| w.scaled_target()).collect();
    match loss {
        ForecastLoss::Mse => g.mse(predictions, &targets),
        ForecastLoss::Nd => {
            // |ŷ·σ + μ − y| = σ·|ŷ − (y − μ)/σ|
            let denom: f64 = batch.iter().flat_map(|w| w.target.iter()).map(|y| y.abs()).sum();
            if denom == 0.0 {
                return Err(Error::UndefinedMetric("ND loss on an all-zero target batch".into()));
            }
            let weights: Vec<f64> = batch
                .iter()
                .flat_map(|w| std::iter::repeat_n(w.scale_std / denom, w.tau_f()))
                .collect();
            g.weighted_l1(predictions, &targets, &weights)
        }
    }
}

/// Teacher-forced forecasting loss of `model` on `batch` (no parameter update).
pub fn teacher_forced_loss(model: &Model, batch: &[WindowSample]) -> Result<f64> {
    let mut g = Graph::new(GradMode::Frozen);
    match model.teacher_forced(&mut g, batch)? {
        Some(pred) => {
            let l = forecast_loss(&mut g, pred, batch, ForecastLoss::Mse)?;
            Ok(g.value(l).item())
        }
        None => {
            // mean model: predictions are the (scaled) context means
            let mut pred = Vec::new();
            let mut target = Vec::new();
            for w in batch {
                let m = w.context.iter().sum::<f64>() / w.tau_c() as f64;
                pred.extend(std::iter::repeat_n(m, w.tau_f()));
                target.extend(w.scaled_target());
            }
            crate::nnet::mse_loss(&pred, &target)
        }
    }
}

/// Discriminator labels for a batch, flattened window-major.
pub fn domain_labels(batch: &[WindowSample], k: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len() * k);
    for w in batch {
        out.extend(spectral::domain_index(&w.context, k)?.periods_normalized);
    }
    Ok(out)
}

fn fault(epoch: usize, iteration: usize, source_index: usize, detail: String) -> Error {
    Error::TrainingFault {
        epoch,
        iteration,
        source_index,
        detail,
    }
}

fn check_grads(grads: &[Option<Vec<f64>>], epoch: usize, iteration: usize) -> Result<()> {
    if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(fault(epoch, iteration, 0, "non-finite gradient".into()));
    }
    Ok(())
}

#[derive(Default, Clone)]
struct Accum {
    gen: f64,
    fc: f64,
    disc: f64,
    n: usize,
}

/// Position of an update inside a run, for fault reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Step {
    pub epoch: usize,
    pub iteration: usize,
}

/// One update of the generative group on `Σ_j (L_f − λ·L_d)` with the
/// discriminator frozen. Returns `(L_f, L_d)` per source, measured before the
/// update (`L_d` is 0 when λ = 0).
pub fn generative_step(
    model: &mut CfaModel,
    batches: &[Vec<WindowSample>],
    labels: &[Vec<f64>],
    cfg: &TrainConfig,
    state: &mut AdamState,
    at: Step,
) -> Result<Vec<(f64, f64)>> {
    let mut g = Graph::new(GradMode::Group(Group::Generative));
    let mut total: Option<Var> = None;
    let mut losses = Vec::with_capacity(batches.len());
    for (j, batch) in batches.iter().enumerate() {
        let tf = model.teacher_forced(&mut g, batch)?;
        let lf = forecast_loss(&mut g, tf.predictions, batch, cfg.loss)?;
        let lf_val = g.value(lf).item();
        let mut lj = lf;
        let mut ld_val = 0.0;
        if cfg.lambda > 0.0 {
            let d = model.discriminate(&mut g, &tf.encoded, batch[0].tau_c())?;
            let ld = g.mse(d, &labels[j])?;
            ld_val = g.value(ld).item();
            let neg = g.scale(ld, -cfg.lambda);
            lj = g.add(lf, neg)?;
        }
        if !lf_val.is_finite() || !ld_val.is_finite() {
            return Err(fault(at.epoch, at.iteration, j, format!("forecast loss {lf_val}, discriminator loss {ld_val}")));
        }
        losses.push((lf_val, ld_val));
        total = Some(match total {
            None => lj,
            Some(t) => g.add(t, lj)?,
        });
    }
    let total = total.ok_or_else(|| Error::contract("no batches"))?;
    let grads = g.backward(total).by_param(model.params.len());
    check_grads(&grads, at.epoch, at.iteration)?;
    adam_step(&mut model.params, &grads, state, &cfg.gen_optimizer)?;
    Ok(losses)
}

/// One update of the discriminator on `Σ_j L_d` over the contexts, with the
/// generative group frozen. Returns `L_d` per source before the update.
pub fn discriminative_step(
    model: &mut CfaModel,
    batches: &[Vec<WindowSample>],
    labels: &[Vec<f64>],
    cfg: &TrainConfig,
    state: &mut AdamState,
    at: Step,
) -> Result<Vec<f64>> {
    let mut g = Graph::new(GradMode::Group(Group::Discriminative));
    let mut total: Option<Var> = None;
    let mut losses = Vec::with_capacity(batches.len());
    for (j, batch) in batches.iter().enumerate() {
        let tau_c = batch[0].tau_c();
        let input: Vec<f64> = batch.iter().flat_map(|w| w.context.iter().copied()).collect();
        let x = g.input(Tensor::column(input));
        let enc = model.encode(&mut g, x, tau_c)?;
        let d = model.discriminate(&mut g, &enc, tau_c)?;
        let ld = g.mse(d, &labels[j])?;
        let ld_val = g.value(ld).item();
        if !ld_val.is_finite() {
            return Err(fault(at.epoch, at.iteration, j, format!("discriminator loss {ld_val}")));
        }
        losses.push(ld_val);
        total = Some(match total {
            None => ld,
            Some(t) => g.add(t, ld)?,
        });
    }
    let total = total.ok_or_else(|| Error::contract("no batches"))?;
    let grads = g.backward(total).by_param(model.params.len());
    check_grads(&grads, at.epoch, at.iteration)?;
    adam_step(&mut model.params, &grads, state, &cfg.disc_optimizer)?;
    Ok(losses)
}

/// Alternating adversarial training of the attention model on all `sources`.
pub fn train_cfa(model: &mut CfaModel, sources: &[DatasetSplit], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if model.cfg.k != cfg.k {
        return Err(Error::config(
            "k",
            format!("training k={} but the discriminator outputs {}", cfg.k, model.cfg.k),
        ));
    }
    let mut streams = source_streams(sources, cfg)?;
    let iters = iterations_per_epoch(&streams, cfg);
    let mut gen_state = AdamState::new(&model.params, Group::Generative);
    let mut disc_state = AdamState::new(&model.params, Group::Discriminative);
    let mut history = History {
        model: "cfa".into(),
        lambda: cfg.lambda,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    info!("training cfa: {} sources, {} epochs x {iters} iterations, lambda={}", sources.len(), cfg.epochs, cfg.lambda);
    for epoch in 0..cfg.epochs {
        let mut acc = vec![Accum::default(); streams.len()];
        for it in 0..iters {
            let batches: Vec<Vec<WindowSample>> = streams
                .iter_mut()
                .map(|s| s.sampler.sample(s.split, cfg.batch_size, &mut s.rng))
                .collect();
            let labels: Vec<Vec<f64>> = batches
                .iter()
                .enumerate()
                .map(|(j, b)| domain_labels(b, cfg.k).map_err(|e| fault(epoch, it, j, format!("domain labels: {e}"))))
                .collect::<Result<_>>()?;

            let at = Step { epoch, iteration: it };
            let gen = generative_step(model, &batches, &labels, cfg, &mut gen_state, at)?;
            let disc = discriminative_step(model, &batches, &labels, cfg, &mut disc_state, at)?;
            for (j, ((lf, ld), ld_after)) in gen.into_iter().zip(disc).enumerate() {
                acc[j].fc += lf;
                acc[j].gen += lf - cfg.lambda * ld;
                acc[j].disc += ld_after;
                acc[j].n += 1;
            }
        }
        let record = EpochRecord {
            epoch,
            sources: streams
                .iter()
                .zip(&acc)
                .enumerate()
                .map(|(j, (s, a))| {
                    let n = a.n.max(1) as f64;
                    SourceLosses {
                        source: source_name(s.split, j),
                        generative_loss: a.gen / n,
                        forecast_loss: a.fc / n,
                        discriminator_loss: Some(a.disc / n),
                    }
                })
                .collect(),
        };
        debug!("cfa {}", format_epoch(&record));
        history.epochs.push(record);
    }
    Ok(history)
}

fn format_epoch(e: &EpochRecord) -> String {
    let parts: Vec<String> = e
        .sources
        .iter()
        .map(|s| match s.discriminator_loss {
            Some(d) => format!("{} Lf={:.4} Ld={:.5}", s.source, s.forecast_loss, d),
            None => format!("{} Lf={:.4}", s.source, s.forecast_loss),
        })
        .collect();
    format!("epoch {}: {}", e.epoch, parts.join("; "))
}

/// Forecast-loss-only training with the same batch schedule as [`train_cfa`].
/// Only the generative group is updated; the mean model is left untouched.
pub fn train_baseline(model: &mut Model, sources: &[DatasetSplit], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let name = model.name().to_string();
    let mut history = History {
        model: name.clone(),
        lambda: 0.0,
        epochs: Vec::new(),
    };
    if matches!(model, Model::Mean) {
        return Ok(history);
    }
    let mut streams = source_streams(sources, cfg)?;
    let iters = iterations_per_epoch(&streams, cfg);
    let n_params = model.params().map(|p| p.len()).unwrap_or(0);
    let mut state = AdamState::new(model.params().expect("parametric model"), Group::Generative);
    info!("training {name}: {} sources, {} epochs x {iters} iterations", sources.len(), cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = vec![Accum::default(); streams.len()];
        for it in 0..iters {
            let batches: Vec<Vec<WindowSample>> = streams
                .iter_mut()
                .map(|s| s.sampler.sample(s.split, cfg.batch_size, &mut s.rng))
                .collect();
            let mut g = Graph::new(GradMode::Group(Group::Generative));
            let mut total: Option<Var> = None;
            for (j, batch) in batches.iter().enumerate() {
                let pred = model.teacher_forced(&mut g, batch)?.expect("parametric model");
                let lf = forecast_loss(&mut g, pred, batch, cfg.loss)?;
                let v = g.value(lf).item();
                if !v.is_finite() {
                    return Err(fault(epoch, it, j, format!("forecast loss {v}")));
                }
                acc[j].fc += v;
                acc[j].gen += v;
                acc[j].n += 1;
                total = Some(match total {
                    None => lf,
                    Some(t) => g.add(t, lf)?,
                });
            }
            let grads = g.backward(total.expect("at least one source")).by_param(n_params);
            check_grads(&grads, epoch, it)?;
            adam_step(model.params_mut().expect("parametric model"), &grads, &mut state, &cfg.gen_optimizer)?;
        }
        let record = EpochRecord {
            epoch,
            sources: streams
                .iter()
                .zip(&acc)
                .enumerate()
                .map(|(j, (s, a))| SourceLosses {
                    source: source_name(s.split, j),
                    generative_loss: a.gen / a.n.max(1) as f64,
                    forecast_loss: a.fc / a.n.max(1) as f64,
                    discriminator_loss: None,
                })
                .collect(),
        };
        debug!("{name} {}", format_epoch(&record));
        history.epochs.push(record);
    }
    Ok(history)
}

/// Adversarial training for the attention model, plain training otherwise.
pub fn train(model: &mut Model, sources: &[DatasetSplit], cfg: &TrainConfig) -> Result<History> {
    match model {
        Model::Cfa(m) => train_cfa(m, sources, cfg),
        other => train_baseline(other, sources, cfg),
    }
}
