//! Autoregressive LSTM baseline: one LSTM layer over the scaled series and a
//! linear head predicting the next value from each hidden state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cfa::{batch_dims, check_forecast_args};
use crate::error::{Error, Result};
use crate::nnet::{Graph, Group, Linear, LstmCell, ParameterSet, Tensor, Var};
use crate::timeseries::WindowSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { hidden: 32, init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub cfg: LstmConfig,
    pub params: ParameterSet,
    cell: LstmCell,
    head: Linear,
}

impl LstmModel {
    pub fn new(cfg: LstmConfig) -> Result<Self> {
        if cfg.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut params = ParameterSet::new();
        let cell = LstmCell::new(&mut params, "lstm", Group::Generative, 1, cfg.hidden, &mut rng);
        let head = Linear::new(&mut params, "head", Group::Generative, cfg.hidden, 1, &mut rng);
        Ok(LstmModel { cfg, params, cell, head })
    }

    /// Sets every parameter (including the forget-gate bias) to zero.
    pub fn zero_all(&mut self) {
        let ids: Vec<_> = self.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            self.params.value_mut(id).data_mut().fill(0.0);
        }
    }

    /// Teacher-forced next-value predictions over each window's forecast
    /// range, `[batch·tau_f, 1]` window-major.
    pub fn teacher_forced(&self, g: &mut Graph, batch: &[WindowSample]) -> Result<Var> {
        let (tau_c, tau_f) = batch_dims(batch)?;
        let steps = tau_c + tau_f - 1;
        let b = batch.len();
        let seqs: Vec<Vec<f64>> = batch
            .iter()
            .map(|w| {
                let mut s = w.context.clone();
                s.extend(w.scaled_target().into_iter().take(tau_f - 1));
                s
            })
            .collect();
        let xs: Vec<Var> = (0..steps)
            .map(|t| g.input(Tensor::column(seqs.iter().map(|s| s[t]).collect())))
            .collect();
        let s0 = self.cell.zero_state(g, b);
        let (hs, _) = self.cell.forward(g, &self.params, &xs, s0)?;
        let preds: Vec<Var> = hs[tau_c - 1..]
            .iter()
            .map(|&h| self.head.forward(g, &self.params, h))
            .collect::<Result<_>>()?;
        let by_window = g.concat_cols(&preds)?; // [b, tau_f]
        Ok(by_window)
    }

    /// Hidden and cell state after reading `context` (tape-free).
    pub fn read(&self, context: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let h_dim = self.cfg.hidden;
        let (mut h, mut c) = (vec![0.0; h_dim], vec![0.0; h_dim]);
        for &x in context {
            self.cell.apply_step(&self.params, &[x], &mut h, &mut c);
        }
        let next = self.head.apply(&self.params, &h)[0];
        (h, c, next)
    }

    pub fn forecast(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
        check_forecast_args(context, horizon, 1)?;
        let (mut h, mut c, mut next) = self.read(context);
        let mut out = Vec::with_capacity(horizon);
        for step in 0..horizon {
            out.push(next);
            if step + 1 < horizon {
                self.cell.apply_step(&self.params, &[next], &mut h, &mut c);
                next = self.head.apply(&self.params, &h)[0];
            }
        }
        Ok(out)
    }

    /// Final hidden state after the context (the exported representation).
    pub fn final_hidden(&self, context: &[f64]) -> Vec<f64> {
        self.read(context).0
    }
}
