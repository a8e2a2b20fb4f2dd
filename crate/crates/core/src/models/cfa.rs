//! Frequency-adapting self-attention forecaster.
//!
//! Encoder: position-wise MLP, then a stack of causal residual convolutions,
//! then projections to keys and queries. Values are projected from the
//! position-wise embedding alone, so they carry no temporal context. A query at
//! position `p` scores the keys at positions `0..p` and mixes the values one
//! step later (`1..=p`), i.e. it looks up "what followed the past moments that
//! resemble now". The decoder maps the projected attention output to the next
//! value. The discriminator sees only time-pooled keys and queries and
//! regresses the normalised top-k periods of the context.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{
    kernels, Activation, AttentionPlan, Conv1d, Graph, Group, Linear, Mlp, MultiHeadAttention, Padding, ParameterSet, QuerySpec, Score, Tensor, Var,
};
use crate::timeseries::WindowSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfaConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_conv_layers: usize,
    pub kernel_size: usize,
    /// Number of periods the discriminator regresses.
    pub k: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub disc_hidden: usize,
    pub score: Score,
    pub init_seed: u64,
}

impl Default for CfaConfig {
    fn default() -> Self {
        CfaConfig {
            d_model: 32,
            n_heads: 4,
            n_conv_layers: 3,
            kernel_size: 3,
            k: 1,
            enc_hidden: 32,
            dec_hidden: 32,
            disc_hidden: 32,
            score: Score::Distance,
            init_seed: 0,
        }
    }
}

impl CfaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("kernel_size", self.kernel_size),
            ("k", self.k),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("disc_hidden", self.disc_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config("n_heads", "must divide d_model"));
        }
        Ok(())
    }
}

/// Keys, queries and values for a batch of equal-length sequences, stacked row-wise.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub keys: Var,
    pub queries: Var,
    pub values: Var,
    pub seg_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfaModel {
    pub cfg: CfaConfig,
    pub params: ParameterSet,
    enc_mlp: Mlp,
    convs: Vec<Conv1d>,
    key_proj: Linear,
    query_proj: Linear,
    value_proj: Linear,
    attention: MultiHeadAttention,
    decoder: Mlp,
    discriminator: Mlp,
}

/// Taped outputs of a teacher-forced pass over one batch.
pub struct TeacherForced {
    /// `[batch·tau_f, 1]`, window-major.
    pub predictions: Var,
    pub encoded: Encoded,
    /// Raw attention node (weights available through the graph).
    pub attention: Var,
}

impl CfaModel {
    pub fn new(cfg: CfaConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut p = ParameterSet::new();
        let gen = Group::Generative;
        let d = cfg.d_model;
        let enc_mlp = Mlp::new(&mut p, "enc.mlp", gen, &[1, cfg.enc_hidden, d], Activation::Relu, Activation::Relu, &mut rng);
        let convs = (0..cfg.n_conv_layers)
            .map(|i| Conv1d::new(&mut p, &format!("enc.conv{i}"), gen, d, d, cfg.kernel_size, Padding::Causal, &mut rng))
            .collect();
        let key_proj = Linear::new(&mut p, "attn.key", gen, d, d, &mut rng);
        let query_proj = Linear::new(&mut p, "attn.query", gen, d, d, &mut rng);
        // queries start as copies of the keys, so under the distance score a
        // position initially matches itself and its phase-alike neighbours
        let kw = p.value(key_proj.w).clone();
        *p.value_mut(query_proj.w) = kw;
        let value_proj = Linear::new(&mut p, "attn.value", gen, d, d, &mut rng);
        let attention = MultiHeadAttention::new(&mut p, "attn", gen, d, cfg.n_heads, &mut rng);
        let decoder = Mlp::new(&mut p, "dec", gen, &[d, cfg.dec_hidden, 1], Activation::Relu, Activation::Identity, &mut rng);
        let discriminator = Mlp::new(
            &mut p,
            "disc",
            Group::Discriminative,
            &[2 * d, cfg.disc_hidden, cfg.disc_hidden, cfg.k],
            Activation::Relu,
            Activation::Sigmoid,
            &mut rng,
        );
        Ok(CfaModel {
            cfg,
            params: p,
            enc_mlp,
            convs,
            key_proj,
            query_proj,
            value_proj,
            attention,
            decoder,
            discriminator,
        })
    }

    /// Zeroes the decoder's output layer so every forecast is exactly 0.
    pub fn zero_decoder_head(&mut self) {
        let last = *self.decoder.last();
        last.zero(&mut self.params);
    }

    pub fn value_projection(&self) -> &Linear {
        &self.value_proj
    }

    /// Encodes `seqs` (each of length `seg_len`) stacked into one `[n·seg_len, 1]` input.
    pub fn encode(&self, g: &mut Graph, input: Var, seg_len: usize) -> Result<Encoded> {
        if seg_len < self.cfg.kernel_size {
            return Err(Error::contract(format!(
                "sequence length {seg_len} shorter than kernel size {}",
                self.cfg.kernel_size
            )));
        }
        let h0 = self.enc_mlp.forward(g, &self.params, input)?;
        let mut h = h0;
        for conv in &self.convs {
            let c = conv.forward(g, &self.params, h, seg_len)?;
            let c = g.relu(c);
            h = g.add(h, c)?;
        }
        Ok(Encoded {
            keys: self.key_proj.forward(g, &self.params, h)?,
            queries: self.query_proj.forward(g, &self.params, h)?,
            values: self.value_proj.forward(g, &self.params, h0)?,
            seg_len,
        })
    }

    /// Encodes a single sequence and returns `(K, Q, V)` values.
    pub fn encode_values(&self, seq: &[f64]) -> Result<(Tensor, Tensor, Tensor)> {
        let mut g = Graph::new(crate::nnet::GradMode::Frozen);
        let x = g.input(Tensor::column(seq.to_vec()));
        let e = self.encode(&mut g, x, seq.len())?;
        Ok((g.value(e.keys).clone(), g.value(e.queries).clone(), g.value(e.values).clone()))
    }

    /// Attention plan for queries at positions `first_query..seg_len` of every segment.
    pub fn lookup_plan(&self, n_seq: usize, seg_len: usize, first_query: usize) -> AttentionPlan {
        let mut queries = Vec::with_capacity(n_seq * (seg_len - first_query));
        for s in 0..n_seq {
            let base = s * seg_len;
            for p in first_query..seg_len {
                queries.push(QuerySpec {
                    q_row: base + p,
                    key_start: base,
                    key_len: p,
                    value_shift: 1,
                });
            }
        }
        AttentionPlan {
            queries,
            score: self.cfg.score,
        }
    }

    /// Predicts the value following each queried position.
    pub fn decode_at(&self, g: &mut Graph, enc: &Encoded, plan: AttentionPlan) -> Result<(Var, Var)> {
        let (att_out, att) = self
            .attention
            .forward(g, &self.params, enc.queries, enc.keys, enc.values, Arc::new(plan))?;
        Ok((self.decoder.forward(g, &self.params, att_out)?, att))
    }

    /// Teacher-forced one-step predictions over the forecast window of every
    /// window in `batch` (all with equal `tau_c`, `tau_f`).
    pub fn teacher_forced(&self, g: &mut Graph, batch: &[WindowSample]) -> Result<TeacherForced> {
        let (tau_c, tau_f) = batch_dims(batch)?;
        if tau_c < 2 {
            return Err(Error::contract("context must have at least 2 values"));
        }
        let seg_len = tau_c + tau_f - 1;
        let mut input = Vec::with_capacity(batch.len() * seg_len);
        for w in batch {
            input.extend_from_slice(&w.context);
            input.extend(w.scaled_target().into_iter().take(tau_f - 1));
        }
        let x = g.input(Tensor::column(input));
        let enc = self.encode(g, x, seg_len)?;
        let plan = self.lookup_plan(batch.len(), seg_len, tau_c - 1);
        let (predictions, attention) = self.decode_at(g, &enc, plan)?;
        Ok(TeacherForced {
            predictions,
            encoded: enc,
            attention,
        })
    }

    /// Discriminator on the mean of the first `pool_len` key/query rows of each segment.
    pub fn discriminate(&self, g: &mut Graph, enc: &Encoded, pool_len: usize) -> Result<Var> {
        let k = g.segment_mean(enc.keys, enc.seg_len, pool_len)?;
        let q = g.segment_mean(enc.queries, enc.seg_len, pool_len)?;
        let kq = g.concat_cols(&[k, q])?;
        self.discriminator.forward(g, &self.params, kq)
    }

    /// Discriminator output for one sequence's keys and queries (`[T, d_model]` each).
    pub fn cfa_discriminate(&self, g: &mut Graph, keys: Var, queries: Var) -> Result<Var> {
        let (tk, tq) = (g.value(keys), g.value(queries));
        if tk.rows() != tq.rows() || tk.cols() != self.cfg.d_model || tq.cols() != self.cfg.d_model {
            return Err(Error::contract(format!(
                "keys {:?} and queries {:?} must both be [T, {}]",
                tk.shape(),
                tq.shape(),
                self.cfg.d_model
            )));
        }
        let t = tk.rows();
        let enc = Encoded {
            keys,
            queries,
            values: keys,
            seg_len: t,
        };
        self.discriminate(g, &enc, t)
    }

    /// Next-value prediction for the last position of `seq` by encoding the
    /// whole sequence from scratch.
    pub fn predict_next_reencode(&self, seq: &[f64]) -> Result<f64> {
        let mut g = Graph::new(crate::nnet::GradMode::Frozen);
        let x = g.input(Tensor::column(seq.to_vec()));
        let enc = self.encode(&mut g, x, seq.len())?;
        let plan = self.lookup_plan(1, seq.len(), seq.len() - 1);
        let (y, _) = self.decode_at(&mut g, &enc, plan)?;
        Ok(g.value(y).item())
    }

    /// Autoregressive forecast that re-encodes `[context ‖ generated]` at every step.
    pub fn forecast_reencode(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
        check_forecast_args(context, horizon, 2.max(self.cfg.kernel_size))?;
        let mut seq = context.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let y = self.predict_next_reencode(&seq)?;
            out.push(y);
            seq.push(y);
        }
        Ok(out)
    }

    /// Attention weights (per head, per key) of the query at the last position of `seq`.
    pub fn last_attention_weights(&self, seq: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(crate::nnet::GradMode::Frozen);
        let x = g.input(Tensor::column(seq.to_vec()));
        let enc = self.encode(&mut g, x, seq.len())?;
        let plan = self.lookup_plan(1, seq.len(), seq.len() - 1);
        let (_, att) = self.decode_at(&mut g, &enc, plan)?;
        Ok(g.attention_weights(att).expect("attention node").to_vec())
    }

    /// Incremental (tape-free) autoregressive forecast. The encoder is causal,
    /// so this equals [`CfaModel::forecast_reencode`].
    pub fn forecast(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
        check_forecast_args(context, horizon, 2.max(self.cfg.kernel_size))?;
        let mut st = IncrementalState::new(self, context.len() + horizon);
        for &x in context {
            st.push(self, x);
        }
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let y = st.predict_next(self);
            out.push(y);
            st.push(self, y);
        }
        Ok(out)
    }

    /// Mean of the keys over the context positions (the exported representation).
    pub fn pooled_keys(&self, context: &[f64]) -> Vec<f64> {
        let mut st = IncrementalState::new(self, context.len());
        for &x in context {
            st.push(self, x);
        }
        let d = self.cfg.d_model;
        let mut mean = vec![0.0; d];
        for row in st.keys.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= context.len() as f64);
        mean
    }
}

/// Per-layer activations of everything encoded so far.
struct IncrementalState {
    layers: Vec<Vec<f64>>,
    keys: Vec<f64>,
    queries: Vec<f64>,
    values: Vec<f64>,
    len: usize,
}

impl IncrementalState {
    fn new(model: &CfaModel, capacity: usize) -> Self {
        let d = model.cfg.d_model;
        IncrementalState {
            layers: vec![Vec::with_capacity(capacity * d); model.convs.len() + 1],
            keys: Vec::with_capacity(capacity * d),
            queries: Vec::with_capacity(capacity * d),
            values: Vec::with_capacity(capacity * d),
            len: 0,
        }
    }

    fn push(&mut self, model: &CfaModel, x: f64) {
        let d = model.cfg.d_model;
        let ks = model.cfg.kernel_size;
        let t = self.len;
        let mut h = model.enc_mlp.apply(&model.params, &[x]);
        self.layers[0].extend_from_slice(&h);
        self.values.extend(model.value_proj.apply(&model.params, &h));
        let mut window = vec![0.0; ks * d];
        for (l, conv) in model.convs.iter().enumerate() {
            window.fill(0.0);
            let prev = &self.layers[l];
            for i in 0..ks {
                // tap i reads position t + i - (ks - 1)
                if let Some(src) = (t + i).checked_sub(ks - 1) {
                    window[i * d..(i + 1) * d].copy_from_slice(&prev[src * d..(src + 1) * d]);
                }
            }
            let c = conv.apply_last(&model.params, &window);
            for (hv, cv) in h.iter_mut().zip(c) {
                *hv += cv.max(0.0);
            }
            self.layers[l + 1].extend_from_slice(&h);
        }
        self.keys.extend(model.key_proj.apply(&model.params, &h));
        self.queries.extend(model.query_proj.apply(&model.params, &h));
        self.len += 1;
    }

    fn predict_next(&self, model: &CfaModel) -> f64 {
        let p = self.len - 1;
        let d = model.cfg.d_model;
        let plan = AttentionPlan {
            queries: vec![QuerySpec {
                q_row: p,
                key_start: 0,
                key_len: p,
                value_shift: 1,
            }],
            score: model.cfg.score,
        };
        let (att, _) = kernels::attention_forward(&self.queries, &self.keys, &self.values, d, model.cfg.n_heads, &plan);
        let proj = model.attention.out.apply(&model.params, &att);
        model.decoder.apply(&model.params, &proj)[0]
    }
}

pub(crate) fn batch_dims(batch: &[WindowSample]) -> Result<(usize, usize)> {
    let first = batch.first().ok_or_else(|| Error::contract("empty batch"))?;
    let (tau_c, tau_f) = (first.tau_c(), first.tau_f());
    if tau_f == 0 {
        return Err(Error::contract("empty forecast window"));
    }
    if batch.iter().any(|w| w.tau_c() != tau_c || w.tau_f() != tau_f) {
        return Err(Error::contract("windows in a batch must share tau_c and tau_f"));
    }
    Ok((tau_c, tau_f))
}

pub(crate) fn check_forecast_args(context: &[f64], horizon: usize, min_context: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::contract("horizon must be positive"));
    }
    if context.len() < min_context {
        return Err(Error::contract(format!(
            "context of length {} shorter than the minimum {min_context}",
            context.len()
        )));
    }
    Ok(())
}
