//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Operations append nodes to a [`Graph`]; [`Graph::backward`] walks the
//! tape in reverse. Nodes that do not depend on any gradient-requiring leaf
//! are skipped, so frozen parameter groups cost nothing in the backward pass.

use std::sync::Arc;

use super::kernels::{self, AttentionPlan, ConvShape, Padding};
use super::params::{Group, ParamId, ParameterSet};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which parameter leaves require gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Frozen,
    Group(Group),
    All,
}

impl GradMode {
    fn trains(self, group: Group) -> bool {
        match self {
            GradMode::Frozen => false,
            GradMode::Group(g) => g == group,
            GradMode::All => true,
        }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        shape: ConvShape,
        col: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        plan: Arc<AttentionPlan>,
        weights: Vec<f64>,
    },
    SegmentMean {
        x: usize,
        seg_len: usize,
        pool_len: usize,
    },
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    GatherRows {
        x: usize,
        rows: Vec<usize>,
    },
    Mse {
        pred: usize,
        target: Vec<f64>,
    },
    WeightedL1 {
        pred: usize,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    mode: GradMode,
    params: Vec<(ParamId, usize)>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient per parameter id (`None` for parameters not on the tape or frozen).
    pub fn by_param(&self, n_params: usize) -> Vec<Option<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; n_params];
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match &mut out[pid.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::contract(format!("{op}: {detail}"))
}

impl Graph {
    pub fn new(mode: GradMode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            params: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Constant input (never differentiated).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf whose gradient is wanted (used by gradient checks on inputs).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, set: &ParameterSet, id: ParamId) -> Var {
        let p = set.get(id);
        let trains = self.mode.trains(p.group);
        let v = self.push(p.value.clone(), Op::Leaf, trains);
        if trains {
            self.params.push((id, v.0));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a.0, b.0), ng))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if tb.len() != ta.cols() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::matrix(ta.rows(), n, out), Op::AddBias(a.0, b.0), ng))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), data);
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| f(*x)).collect());
        let ng = self.ng(a.0);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a.0), kernels::sigmoid)
    }

    /// Length-preserving convolution over the rows of `x[n_seq·seg_len, cin]`,
    /// restarting at every segment boundary. `w` is `[ksize·cin, cout]`
    /// (tap-major), `b` is `[1, cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, seg_len: usize, ksize: usize, padding: Padding) -> Result<Var> {
        if ksize == 0 || (padding == Padding::Same && ksize.is_multiple_of(2)) {
            return Err(shape_err("conv1d", format!("kernel size {ksize} must be odd for same padding")));
        }
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let cin = tx.cols();
        if seg_len == 0 || tx.rows() % seg_len != 0 {
            return Err(shape_err("conv1d", format!("{} rows not a multiple of segment {seg_len}", tx.rows())));
        }
        if tw.rows() != ksize * cin || tb.len() != tw.cols() {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, kernel {:?}, bias {:?}, ksize {ksize}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let shape = ConvShape {
            rows: tx.rows(),
            seg_len,
            cin,
            ksize,
            offset: padding.offset(ksize),
        };
        let cout = tw.cols();
        let col = kernels::im2col(tx.data(), shape);
        let mut out = vec![0.0; shape.rows * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(tb.data());
        }
        kernels::gemm(shape.rows, ksize * cin, cout, &col, false, tw.data(), false, 1.0, &mut out);
        let ng = self.ng(x.0) || self.ng(w.0) || self.ng(b.0);
        Ok(self.push(
            Tensor::matrix(shape.rows, cout, out),
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                shape,
                col,
            },
            ng,
        ))
    }

    /// Multi-head attention (no projections) following `plan`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, plan: Arc<AttentionPlan>) -> Result<Var> {
        let (tq, tk, tv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let d = tq.cols();
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(shape_err("attention", format!("q {:?}, k {:?}, v {:?}", tq.shape(), tk.shape(), tv.shape())));
        }
        for s in &plan.queries {
            if s.q_row >= tq.rows() || s.key_len == 0 || s.key_start + s.key_len + s.value_shift > tk.rows() {
                return Err(shape_err("attention", format!("query spec {s:?} out of range")));
            }
        }
        let (out, weights) = kernels::attention_forward(tq.data(), tk.data(), tv.data(), d, heads, &plan);
        let rows = plan.queries.len();
        let ng = self.ng(q.0) || self.ng(k.0) || self.ng(v.0);
        Ok(self.push(
            Tensor::matrix(rows, d, out),
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                plan,
                weights,
            },
            ng,
        ))
    }

    /// Softmax weights stored by an attention node (per query, head, key).
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Mean of the first `pool_len` rows of every `seg_len`-row segment.
    pub fn segment_mean(&mut self, x: Var, seg_len: usize, pool_len: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if seg_len == 0 || pool_len == 0 || pool_len > seg_len || !tx.rows().is_multiple_of(seg_len) {
            return Err(shape_err(
                "segment_mean",
                format!("{} rows, segment {seg_len}, pool {pool_len}", tx.rows()),
            ));
        }
        let c = tx.cols();
        let n_seg = tx.rows() / seg_len;
        let mut out = vec![0.0; n_seg * c];
        for s in 0..n_seg {
            for t in 0..pool_len {
                for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(tx.row(s * seg_len + t)) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= pool_len as f64);
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::matrix(n_seg, c, out), Op::SegmentMean { x: x.0, seg_len, pool_len }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.nodes[parts[0].0].value.rows();
        if parts.iter().any(|p| self.nodes[p.0].value.rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if start + len > tx.cols() {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {}", tx.cols())));
        }
        let mut out = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            out.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::matrix(tx.rows(), len, out), Op::SliceCols { x: x.0, start }, ng))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if let Some(r) = rows.iter().find(|&&r| r >= tx.rows()) {
            return Err(shape_err("gather_rows", format!("row {r} of {}", tx.rows())));
        }
        let c = tx.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            out.extend_from_slice(tx.row(r));
        }
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::matrix(rows.len(), c, out), Op::GatherRows { x: x.0, rows }, ng))
    }

    /// Mean squared error against a constant target (scalar node).
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let tp = &self.nodes[pred.0].value;
        if tp.len() != target.len() || target.is_empty() {
            return Err(shape_err("mse", format!("{} predictions vs {} targets", tp.len(), target.len())));
        }
        let loss = super::loss::mse_loss(tp.data(), target)?;
        let ng = self.ng(pred.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pred.0,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// `Σ w_i |pred_i − target_i|` (scalar node).
    pub fn weighted_l1(&mut self, pred: Var, target: &[f64], weights: &[f64]) -> Result<Var> {
        let tp = &self.nodes[pred.0].value;
        if tp.len() != target.len() || weights.len() != target.len() || target.is_empty() {
            return Err(shape_err(
                "weighted_l1",
                format!("{} predictions, {} targets, {} weights", tp.len(), target.len(), weights.len()),
            ));
        }
        let loss = tp
            .data()
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((p, t), w)| w * (p - t).abs())
            .sum();
        let ng = self.ng(pred.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedL1 {
                pred: pred.0,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].value.len() == 1 && self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], i: usize) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let n = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    kernels::gemm(m, n, k, g, false, tb.data(), true, 1.0, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    kernels::gemm(k, m, n, ta.data(), true, g, false, 1.0, gb);
                }
            }
            Op::AddBias(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                let n = self.nodes[*b].value.len();
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (d, gi) in ga.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Conv1d { x, w, b, shape, col } => {
                let tw = &self.nodes[*w].value;
                let cout = tw.cols();
                let width = shape.ksize * shape.cin;
                if let Some(gw) = self.acc(grads, *w) {
                    kernels::gemm(width, shape.rows, cout, col, true, g, false, 1.0, gw);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(cout) {
                        add_into(gb, row);
                    }
                }
                if self.nodes[*x].needs_grad {
                    let mut dcol = vec![0.0; shape.rows * width];
                    kernels::gemm(shape.rows, cout, width, g, false, tw.data(), true, 0.0, &mut dcol);
                    if let Some(gx) = self.acc(grads, *x) {
                        kernels::col2im_add(&dcol, *shape, gx);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                plan,
                weights,
            } => {
                let (tq, tk, tv) = (&self.nodes[*q].value, &self.nodes[*k].value, &self.nodes[*v].value);
                let d = tq.cols();
                let mut dq = self.nodes[*q].needs_grad.then(|| vec![0.0; tq.len()]);
                let mut dk = self.nodes[*k].needs_grad.then(|| vec![0.0; tk.len()]);
                let mut dv = self.nodes[*v].needs_grad.then(|| vec![0.0; tv.len()]);
                kernels::attention_backward(
                    tq.data(),
                    tk.data(),
                    tv.data(),
                    d,
                    *heads,
                    plan,
                    weights,
                    g,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                for (idx, part) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let (Some(part), Some(acc)) = (part, self.acc(grads, idx)) {
                        add_into(acc, &part);
                    }
                }
            }
            Op::SegmentMean { x, seg_len, pool_len } => {
                let c = self.nodes[*x].value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    let inv = 1.0 / *pool_len as f64;
                    for (s, gs) in g.chunks(c).enumerate() {
                        for t in 0..*pool_len {
                            let r = s * seg_len + t;
                            for (d, gi) in gx[r * c..(r + 1) * c].iter_mut().zip(gs) {
                                *d += gi * inv;
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[*x].value.cols();
                let len = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + len], gr);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let c = self.nodes[*x].value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (gr, &r) in g.chunks(c).zip(rows) {
                        add_into(&mut gx[r * c..(r + 1) * c], gr);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[*pred].value.data();
                let scale = 2.0 * g[0] / target.len() as f64;
                if let Some(gp) = self.acc(grads, *pred) {
                    for ((d, pv), tv) in gp.iter_mut().zip(p).zip(target) {
                        *d += scale * (pv - tv);
                    }
                }
            }
            Op::WeightedL1 { pred, target, weights } => {
                let p = self.nodes[*pred].value.data();
                if let Some(gp) = self.acc(grads, *pred) {
                    for (((d, pv), tv), w) in gp.iter_mut().zip(p).zip(target).zip(weights) {
                        let diff = pv - tv;
                        if diff != 0.0 {
                            *d += g[0] * w * diff.signum();
                        }
                    }
                }
            }
        }
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
