//! Parameterised building blocks. Each has a taped `forward` for training
//! and, where inference needs it, a tape-free `apply` on raw rows.

use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, Var};
use super::kernels::{self, AttentionPlan, Padding};
use super::params::{Group, ParamId, ParameterSet};
use super::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn taped(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn apply_in_place(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => x.iter_mut().for_each(|v| *v = kernels::sigmoid(*v)),
        }
    }
}

/// `y = xW + b`, applied to every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(set: &mut ParameterSet, name: &str, group: Group, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            w: set.add_weight(format!("{name}.w"), group, d_in, d_out, rng),
            b: set.add_bias(format!("{name}.b"), group, d_out),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParameterSet, x: Var) -> Result<Var> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        linear(g, x, w, b)
    }

    pub fn apply(&self, set: &ParameterSet, x: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.d_in;
        let mut out = Vec::with_capacity(rows * self.d_out);
        for _ in 0..rows {
            out.extend_from_slice(set.value(self.b).data());
        }
        kernels::gemm(rows, self.d_in, self.d_out, x, false, set.value(self.w).data(), false, 1.0, &mut out);
        out
    }

    /// Sets weight and bias to zero (used for zero-output heads).
    pub fn zero(&self, set: &mut ParameterSet) {
        set.value_mut(self.w).data_mut().fill(0.0);
        set.value_mut(self.b).data_mut().fill(0.0);
    }
}

/// `linear(x, W, b) = xW + b` on graph nodes.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Stack of linear layers; `hidden` activation between them, `output` after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(
        set: &mut ParameterSet,
        name: &str,
        group: Group,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(set, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Mlp { layers, hidden, output }
    }

    fn act(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParameterSet, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            let y = l.forward(g, set, x)?;
            x = self.act(i).taped(g, y);
        }
        Ok(x)
    }

    pub fn apply(&self, set: &ParameterSet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            cur = l.apply(set, &cur);
            self.act(i).apply_in_place(&mut cur);
        }
        cur
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }
}

/// One convolution layer; weight `[ksize·cin, cout]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub padding: Padding,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        set: &mut ParameterSet,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        ksize: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / ((cin + cout) * ksize) as f64).sqrt();
        let data = (0..ksize * cin * cout).map(|_| rng.random_range(-bound..bound)).collect();
        Conv1d {
            w: set.add(format!("{name}.w"), group, Tensor::matrix(ksize * cin, cout, data)),
            b: set.add_bias(format!("{name}.b"), group, cout),
            cin,
            cout,
            ksize,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParameterSet, x: Var, seg_len: usize) -> Result<Var> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        g.conv1d(x, w, b, seg_len, self.ksize, self.padding)
    }

    /// Output at the last row of `window` (the `ksize` most recent input rows,
    /// oldest first, zero rows where the sequence has not started). Causal only.
    pub fn apply_last(&self, set: &ParameterSet, window: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.padding, Padding::Causal);
        let mut out = set.value(self.b).data().to_vec();
        kernels::gemm(1, self.ksize * self.cin, self.cout, window, false, set.value(self.w).data(), false, 1.0, &mut out);
        out
    }
}

/// Attention over pre-projected Q/K/V followed by an output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(set: &mut ParameterSet, name: &str, group: Group, d: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            out: Linear::new(set, &format!("{name}.out"), group, d, d, rng),
            heads,
        }
    }

    /// Returns `(projected output, raw attention node)`.
    pub fn forward(&self, g: &mut Graph, set: &ParameterSet, q: Var, k: Var, v: Var, plan: Arc<AttentionPlan>) -> Result<(Var, Var)> {
        let att = g.attention(q, k, v, self.heads, plan)?;
        Ok((self.out.forward(g, set, att)?, att))
    }
}

/// Standard LSTM cell with gate order input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

/// Hidden and cell state, one row per sequence in the batch.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    /// Glorot weights over `[x ‖ h] → 4h`, zero biases except forget gate +1.
    pub fn new<R: Rng>(set: &mut ParameterSet, name: &str, group: Group, d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        let w = set.add_weight(format!("{name}.w"), group, d_in + d_hidden, 4 * d_hidden, rng);
        let b = set.add_bias(format!("{name}.b"), group, 4 * d_hidden);
        set.value_mut(b).data_mut()[d_hidden..2 * d_hidden].fill(1.0);
        LstmCell { w, b, d_in, d_hidden }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.input(Tensor::zeros(vec![batch, self.d_hidden])),
            c: g.input(Tensor::zeros(vec![batch, self.d_hidden])),
        }
    }

    pub fn step(&self, g: &mut Graph, w: Var, b: Var, x: Var, s: LstmState) -> Result<LstmState> {
        let h = self.d_hidden;
        let xh = g.concat_cols(&[x, s.h])?;
        let z = linear(g, xh, w, b)?;
        let zi = g.slice_cols(z, 0, h)?;
        let zf = g.slice_cols(z, h, h)?;
        let zg = g.slice_cols(z, 2 * h, h)?;
        let zo = g.slice_cols(z, 3 * h, h)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, s.c)?;
        let ig = g.mul(i, gg)?;
        let c = g.add(fc, ig)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over `xs` (one `[batch, d_in]` node per step).
    pub fn forward(&self, g: &mut Graph, set: &ParameterSet, xs: &[Var], state: LstmState) -> Result<(Vec<Var>, LstmState)> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        let mut s = state;
        let mut hs = Vec::with_capacity(xs.len());
        for &x in xs {
            s = self.step(g, w, b, x, s)?;
            hs.push(s.h);
        }
        Ok((hs, s))
    }

    /// Tape-free single step on one sequence; updates `h` and `c` in place.
    pub fn apply_step(&self, set: &ParameterSet, x: &[f64], h: &mut [f64], c: &mut [f64]) {
        let hd = self.d_hidden;
        let mut xh = Vec::with_capacity(self.d_in + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut z = set.value(self.b).data().to_vec();
        kernels::gemm(1, self.d_in + hd, 4 * hd, &xh, false, set.value(self.w).data(), false, 1.0, &mut z);
        for j in 0..hd {
            let i = kernels::sigmoid(z[j]);
            let f = kernels::sigmoid(z[hd + j]);
            let gg = z[2 * hd + j].tanh();
            let o = kernels::sigmoid(z[3 * hd + j]);
            c[j] = f * c[j] + i * gg;
            h[j] = o * c[j].tanh();
        }
    }
}
