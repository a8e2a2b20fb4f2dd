//! Forward/backward kernels on raw row-major slices. The graph calls these;
//! inference paths call the forward halves directly.

/// `c = beta·c + op(a)·op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
/// `ta`/`tb` select the transpose of the stored (row-major) operand.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Where a convolution window sits relative to its output position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Centered window, zero padded on both sides (odd kernels only).
    Same,
    /// Window ends at the output position; only past inputs contribute.
    Causal,
}

impl Padding {
    pub fn offset(self, ksize: usize) -> usize {
        match self {
            Padding::Same => (ksize - 1) / 2,
            Padding::Causal => ksize - 1,
        }
    }
}

/// Geometry of a batched 1-D convolution over `rows = n_seq·seg_len` rows.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub rows: usize,
    pub seg_len: usize,
    pub cin: usize,
    pub ksize: usize,
    pub offset: usize,
}

/// Unfolds `x[rows, cin]` into `[rows, ksize·cin]`, zero outside each segment.
pub fn im2col(x: &[f64], s: ConvShape) -> Vec<f64> {
    let width = s.ksize * s.cin;
    let mut col = vec![0.0; s.rows * width];
    for r in 0..s.rows {
        let t = r % s.seg_len;
        let base = r - t;
        for i in 0..s.ksize {
            let src = t as isize + i as isize - s.offset as isize;
            if src < 0 || src >= s.seg_len as isize {
                continue;
            }
            let src_row = base + src as usize;
            col[r * width + i * s.cin..r * width + (i + 1) * s.cin]
                .copy_from_slice(&x[src_row * s.cin..(src_row + 1) * s.cin]);
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates `dcol` back into `dx`.
pub fn col2im_add(dcol: &[f64], s: ConvShape, dx: &mut [f64]) {
    let width = s.ksize * s.cin;
    for r in 0..s.rows {
        let t = r % s.seg_len;
        let base = r - t;
        for i in 0..s.ksize {
            let src = t as isize + i as isize - s.offset as isize;
            if src < 0 || src >= s.seg_len as isize {
                continue;
            }
            let src_row = base + src as usize;
            let from = &dcol[r * width + i * s.cin..r * width + (i + 1) * s.cin];
            for (d, g) in dx[src_row * s.cin..(src_row + 1) * s.cin].iter_mut().zip(from) {
                *d += g;
            }
        }
    }
}

/// One query row of an attention pass: it scores keys
/// `key_start..key_start + key_len` and mixes values at `key + value_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySpec {
    pub q_row: usize,
    pub key_start: usize,
    pub key_len: usize,
    pub value_shift: usize,
}

/// Attention score between a query and a key (both per head, `dh` wide).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Score {
    /// `q·k / √dh`
    #[default]
    Dot,
    /// `−‖q − k‖² / (2√dh)`: peaks at the nearest key.
    Distance,
}

impl Score {
    fn eval(self, q: &[f64], k: &[f64], scale: f64) -> f64 {
        match self {
            Score::Dot => q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale,
            Score::Distance => -0.5 * q.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPlan {
    pub queries: Vec<QuerySpec>,
    pub score: Score,
}

impl AttentionPlan {
    /// Every query row attends to every key row (`tq × tk`, no mask).
    pub fn full(tq: usize, tk: usize) -> Self {
        AttentionPlan {
            queries: (0..tq)
                .map(|q| QuerySpec {
                    q_row: q,
                    key_start: 0,
                    key_len: tk,
                    value_shift: 0,
                })
                .collect(),
            score: Score::Dot,
        }
    }

    pub fn weight_len(&self, heads: usize) -> usize {
        self.queries.iter().map(|q| q.key_len * heads).sum()
    }
}

/// Multi-head scaled dot-product attention without projections.
/// Returns `(output[nq, d], weights)`; weights are laid out per query, per
/// head, per key.
pub fn attention_forward(q: &[f64], k: &[f64], v: &[f64], d: usize, heads: usize, plan: &AttentionPlan) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; plan.queries.len() * d];
    let mut weights = vec![0.0; plan.weight_len(heads)];
    let mut w_off = 0;
    for (qi, spec) in plan.queries.iter().enumerate() {
        let qrow = &q[spec.q_row * d..(spec.q_row + 1) * d];
        for h in 0..heads {
            let w = &mut weights[w_off..w_off + spec.key_len];
            let qh = &qrow[h * dh..(h + 1) * dh];
            let mut max = f64::NEG_INFINITY;
            for (j, wj) in w.iter_mut().enumerate() {
                let kr = (spec.key_start + j) * d + h * dh;
                let s = plan.score.eval(qh, &k[kr..kr + dh], scale);
                *wj = s;
                max = max.max(s);
            }
            let mut total = 0.0;
            for wj in w.iter_mut() {
                *wj = (*wj - max).exp();
                total += *wj;
            }
            let o = &mut out[qi * d + h * dh..qi * d + (h + 1) * dh];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj /= total;
                let vr = (spec.key_start + j + spec.value_shift) * d + h * dh;
                for (oc, vc) in o.iter_mut().zip(&v[vr..vr + dh]) {
                    *oc += *wj * vc;
                }
            }
            w_off += spec.key_len;
        }
    }
    (out, weights)
}

/// Gradients of [`attention_forward`] accumulated into `dq`, `dk`, `dv`
/// (any of which may be `None`).
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    heads: usize,
    plan: &AttentionPlan,
    weights: &[f64],
    dout: &[f64],
    mut dq: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut dv: Option<&mut [f64]>,
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut w_off = 0;
    let mut dscore = Vec::new();
    for (qi, spec) in plan.queries.iter().enumerate() {
        for h in 0..heads {
            let w = &weights[w_off..w_off + spec.key_len];
            let go = &dout[qi * d + h * dh..qi * d + (h + 1) * dh];
            dscore.clear();
            let mut dot = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let vr = (spec.key_start + j + spec.value_shift) * d + h * dh;
                let dw = go.iter().zip(&v[vr..vr + dh]).map(|(a, b)| a * b).sum::<f64>();
                dscore.push(dw);
                dot += wj * dw;
                if let Some(dv) = dv.as_deref_mut() {
                    for (dvc, g) in dv[vr..vr + dh].iter_mut().zip(go) {
                        *dvc += wj * g;
                    }
                }
            }
            let qr = spec.q_row * d + h * dh;
            for (j, wj) in w.iter().enumerate() {
                let ds = wj * (dscore[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kr = (spec.key_start + j) * d + h * dh;
                let (qh, kh) = (&q[qr..qr + dh], &k[kr..kr + dh]);
                match plan.score {
                    Score::Dot => {
                        if let Some(dq) = dq.as_deref_mut() {
                            for (dqc, kc) in dq[qr..qr + dh].iter_mut().zip(kh) {
                                *dqc += ds * kc;
                            }
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            for (dkc, qc) in dk[kr..kr + dh].iter_mut().zip(qh) {
                                *dkc += ds * qc;
                            }
                        }
                    }
                    Score::Distance => {
                        if let Some(dq) = dq.as_deref_mut() {
                            for ((dqc, qc), kc) in dq[qr..qr + dh].iter_mut().zip(qh).zip(kh) {
                                *dqc -= ds * (qc - kc);
                            }
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            for ((dkc, qc), kc) in dk[kr..kr + dh].iter_mut().zip(qh).zip(kh) {
                                *dkc += ds * (qc - kc);
                            }
                        }
                    }
                }
            }
            w_off += spec.key_len;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_match_naive() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let d = 4;
        let q: Vec<f64> = (0..3 * d).map(|i| (i as f64).sin() * 3.0).collect();
        let k: Vec<f64> = (0..5 * d).map(|i| (i as f64 * 0.7).cos() * 3.0).collect();
        let v = k.clone();
        let plan = AttentionPlan::full(3, 5);
        let (_, w) = attention_forward(&q, &k, &v, d, 2, &plan);
        for chunk in w.chunks(5) {
            assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_im2col_sees_only_past() {
        let x: Vec<f64> = (1..=4).map(|i| i as f64).collect();
        let s = ConvShape { rows: 4, seg_len: 2, cin: 1, ksize: 3, offset: Padding::Causal.offset(3) };
        // two segments [1,2] and [3,4]; nothing crosses the boundary
        assert_eq!(im2col(&x, s), vec![0.0, 0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 3.0, 4.0]);
    }
}
