//! Finite-difference checks (central differences, h = 1e-5, float64) for every
//! differentiable primitive and for the composed forecaster paths, plus the
//! hand-computed examples for each primitive.

mod common;

use std::sync::Arc;

use common::{away_from_zero, matrix, random_windows, rng, uniform};
use freqcast::models::{CfaConfig, CfaModel, LstmConfig, LstmModel};
use freqcast::nnet::gradcheck::{check_inputs, check_params, weighted_sum, GradCheck, DEFAULT_STEP};
use freqcast::nnet::{
    adam_step, linear, mae_sum, mse_loss, AdamConfig, AdamState, AttentionPlan, GradMode, Graph, Group, LstmCell, Padding, ParameterSet,
    QuerySpec, Score, Tensor,
};
use freqcast::Error;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-5;

fn cases() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

fn ok(c: GradCheck, tol: f64) -> std::result::Result<(), TestCaseError> {
    prop_assert!(c.n_checked > 0);
    prop_assert!(c.rel_error < tol, "relative error {} (max abs {})", c.rel_error, c.max_abs_error);
    Ok(())
}

fn padding(causal: bool) -> Padding {
    if causal {
        Padding::Causal
    } else {
        Padding::Same
    }
}

fn random_plan(seed: u64, tq: usize, tk: usize, shift: bool, score: Score) -> AttentionPlan {
    let mut r = rng(seed);
    let queries = (0..tq)
        .map(|q| {
            let shift = usize::from(shift && tk > 1);
            let key_len = r.random_range(1..=tk - shift);
            let key_start = r.random_range(0..=tk - shift - key_len);
            QuerySpec {
                q_row: q,
                key_start,
                key_len,
                value_shift: shift,
            }
        })
        .collect();
    AttentionPlan { queries, score }
}

fn run(f: impl Fn(&mut Graph) -> Var1) -> Tensor {
    let mut g = Graph::new(GradMode::Frozen);
    let v = f(&mut g);
    g.value(v).clone()
}

type Var1 = freqcast::nnet::Var;

// ---------------------------------------------------------------- linear

#[test]
fn linear_identity_and_worked_example() {
    let out = run(|g| {
        let x = g.input(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]));
        let w = g.input(Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = g.input(Tensor::matrix(1, 3, vec![0.0; 3]));
        linear(g, x, w, b).unwrap()
    });
    assert_eq!(out.data(), &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]);

    let out = run(|g| {
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let w = g.input(Tensor::matrix(2, 1, vec![1.0, 1.0]));
        let b = g.input(Tensor::matrix(1, 1, vec![0.5]));
        linear(g, x, w, b).unwrap()
    });
    assert_eq!(out.data(), &[3.5]);
}

#[test]
fn linear_shape_mismatch_is_an_error() {
    let mut g = Graph::new(GradMode::Frozen);
    let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]));
    let w = g.input(Tensor::matrix(3, 1, vec![1.0; 3]));
    let b = g.input(Tensor::matrix(1, 1, vec![0.0]));
    assert!(matches!(linear(&mut g, x, w, b), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn linear_gradients(seed in any::<u64>(), rows in 1usize..5, din in 1usize..6, dout in 1usize..6) {
        let mut r = rng(seed);
        let ins = [matrix(&mut r, rows, din), matrix(&mut r, din, dout), matrix(&mut r, 1, dout)];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let y = linear(g, v[0], v[1], v[2])?;
            weighted_sum(g, y, seed)
        }).unwrap();
        ok(c, 1e-6)?;
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
        let mut r = rng(seed);
        let ins = [away_from_zero(&mut r, rows, cols), matrix(&mut r, rows, cols)];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let a = g.relu(v[0]);
            let b = g.tanh(v[1]);
            let s = g.sigmoid(v[0]);
            let ab = g.mul(a, b)?;
            let sum = g.add(ab, s)?;
            let y = g.scale(sum, -1.7);
            weighted_sum(g, y, seed)
        }).unwrap();
        ok(c, TOL)?;
    }

    #[test]
    fn matmul_and_bias_gradients(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let ins = [matrix(&mut r, m, k), matrix(&mut r, k, n), matrix(&mut r, 1, n)];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.add_bias(y, v[2])?;
            let sq = g.mul(y, y)?;
            weighted_sum(g, sq, seed)
        }).unwrap();
        ok(c, TOL)?;
    }

    #[test]
    fn reshaping_gradients(seed in any::<u64>(), n_seg in 1usize..4, seg_len in 1usize..5, cols in 2usize..5) {
        let mut r = rng(seed);
        let rows = n_seg * seg_len;
        let pool = r.random_range(1..=seg_len);
        let start = r.random_range(0..cols - 1);
        let len = r.random_range(1..=cols - start);
        let picks: Vec<usize> = (0..rows + 2).map(|_| r.random_range(0..rows)).collect();
        let ins = [matrix(&mut r, rows, cols), matrix(&mut r, rows, 2)];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let cat = g.concat_cols(&[v[0], v[1]])?;
            let sl = g.slice_cols(cat, start, len)?;
            let gath = g.gather_rows(sl, picks.clone())?;
            let sq = g.mul(gath, gath)?;
            let a = weighted_sum(g, sq, seed)?;
            let pooled = g.segment_mean(cat, seg_len, pool)?;
            let pooled = g.tanh(pooled);
            let b = weighted_sum(g, pooled, seed + 1)?;
            g.add(a, b)
        }).unwrap();
        ok(c, TOL)?;
    }
}

// ---------------------------------------------------------------- conv1d

#[test]
fn conv_identity_kernel_and_box_filter() {
    let x = || Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]);
    let out = run(|g| {
        let xv = g.input(x());
        let w = g.input(Tensor::matrix(3, 1, vec![0.0, 1.0, 0.0]));
        let b = g.input(Tensor::matrix(1, 1, vec![0.0]));
        g.conv1d(xv, w, b, 3, 3, Padding::Same).unwrap()
    });
    assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    let out = run(|g| {
        let xv = g.input(x());
        let w = g.input(Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]));
        let b = g.input(Tensor::matrix(1, 1, vec![0.0]));
        g.conv1d(xv, w, b, 3, 3, Padding::Same).unwrap()
    });
    assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_even_kernel_rejected_for_same_padding() {
    let mut g = Graph::new(GradMode::Frozen);
    let x = g.input(Tensor::matrix(4, 1, vec![1.0; 4]));
    let w = g.input(Tensor::matrix(2, 1, vec![1.0; 2]));
    let b = g.input(Tensor::matrix(1, 1, vec![0.0]));
    assert!(g.conv1d(x, w, b, 4, 2, Padding::Same).is_err());
    assert!(g.conv1d(x, w, b, 4, 2, Padding::Causal).is_ok());
}

#[test]
fn causal_conv_ignores_the_future() {
    let base: Vec<f64> = (0..8).map(|t| (t as f64 * 0.7).sin()).collect();
    let eval = |x: Vec<f64>| {
        run(|g| {
            let xv = g.input(Tensor::matrix(8, 1, x.clone()));
            let w = g.input(Tensor::matrix(3, 1, vec![0.3, -0.2, 0.9]));
            let b = g.input(Tensor::matrix(1, 1, vec![0.1]));
            g.conv1d(xv, w, b, 8, 3, Padding::Causal).unwrap()
        })
    };
    let a = eval(base.clone());
    let mut changed = base;
    changed[5] += 10.0;
    let b = eval(changed);
    assert_eq!(a.data()[..5], b.data()[..5]);
    assert_ne!(a.data()[5], b.data()[5]);
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn conv_gradients(
        seed in any::<u64>(),
        n_seq in 1usize..3,
        seg_len in 1usize..7,
        cin in 1usize..4,
        cout in 1usize..4,
        half in 0usize..3,
        causal in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let ksize = if causal { half + 1 } else { 2 * half + 1 };
        let ins = [matrix(&mut r, n_seq * seg_len, cin), matrix(&mut r, ksize * cin, cout), matrix(&mut r, 1, cout)];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], seg_len, ksize, padding(causal))?;
            let y = g.tanh(y);
            weighted_sum(g, y, seed)
        }).unwrap();
        ok(c, TOL)?;
    }
}

// ---------------------------------------------------------------- LSTM

fn lstm_cell(seed: u64, d_in: usize, d_h: usize) -> (ParameterSet, LstmCell) {
    let mut set = ParameterSet::new();
    let cell = LstmCell::new(&mut set, "cell", Group::Generative, d_in, d_h, &mut rng(seed));
    (set, cell)
}

#[test]
fn lstm_all_zero_weights_give_zero_outputs() {
    let (mut set, cell) = lstm_cell(0, 2, 3);
    set.value_mut(cell.w).data_mut().fill(0.0);
    set.value_mut(cell.b).data_mut().fill(0.0);
    let mut g = Graph::new(GradMode::Frozen);
    let xs: Vec<_> = (0..4).map(|t| g.input(Tensor::matrix(1, 2, vec![t as f64, -1.0]))).collect();
    let s0 = cell.zero_state(&mut g, 1);
    let (hs, _) = cell.forward(&mut g, &set, &xs, s0).unwrap();
    for h in hs {
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lstm_single_step_matches_gate_algebra() {
    // d_in = 1, d_h = 1; W rows: [x, h]; columns: i, f, g, o.
    let (mut set, cell) = lstm_cell(0, 1, 1);
    let (wx, wh) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.7]);
    let bias = [0.05, 1.0, -0.1, 0.2];
    let mut w = wx.to_vec();
    w.extend_from_slice(&wh);
    set.value_mut(cell.w).data_mut().copy_from_slice(&w);
    set.value_mut(cell.b).data_mut().copy_from_slice(&bias);
    let (x, h0, c0) = (1.5, 0.25, -0.4);

    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let z: Vec<f64> = (0..4).map(|j| wx[j] * x + wh[j] * h0 + bias[j]).collect();
    let (i, f, gg, o) = (sig(z[0]), sig(z[1]), z[2].tanh(), sig(z[3]));
    let c1 = f * c0 + i * gg;
    let h1 = o * c1.tanh();

    let mut g = Graph::new(GradMode::Frozen);
    let xv = g.input(Tensor::matrix(1, 1, vec![x]));
    let s = freqcast::nnet::LstmState {
        h: g.input(Tensor::matrix(1, 1, vec![h0])),
        c: g.input(Tensor::matrix(1, 1, vec![c0])),
    };
    let (_, out) = cell.forward(&mut g, &set, &[xv], s).unwrap();
    assert!((g.value(out.h).item() - h1).abs() < 1e-15);
    assert!((g.value(out.c).item() - c1).abs() < 1e-15);

    let (mut h, mut c) = (vec![h0], vec![c0]);
    cell.apply_step(&set, &[x], &mut h, &mut c);
    assert!((h[0] - h1).abs() < 1e-15 && (c[0] - c1).abs() < 1e-15);
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn lstm_gradients_through_five_steps(seed in any::<u64>(), batch in 1usize..3, d_in in 1usize..3, d_h in 1usize..4) {
        let (set, cell) = lstm_cell(seed, d_in, d_h);
        let mut r = rng(seed ^ 0xABCD);
        let xs: Vec<Tensor> = (0..5).map(|_| matrix(&mut r, batch, d_in)).collect();
        let c = check_params(&set, None, DEFAULT_STEP, |g, set| {
            let vars: Vec<_> = xs.iter().map(|x| g.input(x.clone())).collect();
            let s0 = cell.zero_state(g, batch);
            let (hs, last) = cell.forward(g, set, &vars, s0)?;
            let all = g.concat_cols(&hs)?;
            let a = weighted_sum(g, all, seed)?;
            let b = weighted_sum(g, last.c, seed + 3)?;
            g.add(a, b)
        }).unwrap();
        ok(c, TOL)?;

        let c = check_inputs(&xs, DEFAULT_STEP, |g, v| {
            let w = g.input(set.value(cell.w).clone());
            let b = g.input(set.value(cell.b).clone());
            let mut s = cell.zero_state(g, batch);
            for &x in v {
                s = cell.step(g, w, b, x, s)?;
            }
            weighted_sum(g, s.h, seed)
        }).unwrap();
        ok(c, TOL)?;
    }
}

// ---------------------------------------------------------------- attention

fn attend(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, plan: AttentionPlan) -> (Tensor, Vec<f64>) {
    let mut g = Graph::new(GradMode::Frozen);
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = g.attention(qv, kv, vv, heads, Arc::new(plan)).unwrap();
    (g.value(out).clone(), g.attention_weights(out).unwrap().to_vec())
}

#[test]
fn single_key_returns_its_value() {
    let mut r = rng(3);
    let v = matrix(&mut r, 1, 4);
    for score in [Score::Dot, Score::Distance] {
        let q = matrix(&mut r, 3, 4);
        let k = matrix(&mut r, 1, 4);
        let plan = AttentionPlan { score, ..AttentionPlan::full(3, 1) };
        let (out, w) = attend(&q, &k, &v, 2, plan);
        assert!(w.iter().all(|&x| x == 1.0));
        for row in 0..3 {
            assert_eq!(out.row(row), v.row(0));
        }
    }
}

#[test]
fn saturated_query_selects_its_key() {
    // orthonormal keys; a query equal to 50·k_i picks value row i
    let d = 4;
    let mut k = vec![0.0; d * d];
    for i in 0..d {
        k[i * d + i] = 1.0;
    }
    let k = Tensor::matrix(d, d, k);
    let v = matrix(&mut rng(9), d, d);
    for i in 0..d {
        let q = Tensor::matrix(1, d, k.row(i).iter().map(|x| 50.0 * x).collect());
        let (out, _) = attend(&q, &k, &v, 1, AttentionPlan::full(1, d));
        for (a, b) in out.row(0).iter().zip(v.row(i)) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let plan = AttentionPlan { score: Score::Distance, ..AttentionPlan::full(1, d) };
        let (out, _) = attend(&q.clone(), &Tensor::matrix(d, d, k.data().iter().map(|x| 50.0 * x).collect()), &v, 1, plan);
        for (a, b) in out.row(0).iter().zip(v.row(i)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn indivisible_heads_rejected() {
    let mut r = rng(0);
    let mut g = Graph::new(GradMode::Frozen);
    let q = g.input(matrix(&mut r, 2, 6));
    let k = g.input(matrix(&mut r, 2, 6));
    let v = g.input(matrix(&mut r, 2, 6));
    assert!(g.attention(q, k, v, 4, Arc::new(AttentionPlan::full(2, 2))).is_err());
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn softmax_rows_and_convex_hull(seed in any::<u64>(), tq in 1usize..5, tk in 1usize..7, heads in 1usize..4, dh in 1usize..4, dist in any::<bool>()) {
        let d = heads * dh;
        let mut r = rng(seed);
        let (q, k, v) = (matrix(&mut r, tq, d), matrix(&mut r, tk, d), matrix(&mut r, tk, d));
        let score = if dist { Score::Distance } else { Score::Dot };
        let plan = random_plan(seed, tq, tk, false, score);
        let (out, w) = attend(&q, &k, &v, heads, plan.clone());
        let mut off = 0;
        for (qi, spec) in plan.queries.iter().enumerate() {
            for h in 0..heads {
                let ws = &w[off..off + spec.key_len];
                off += spec.key_len;
                prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for c in h * dh..(h + 1) * dh {
                    let col: Vec<f64> = (spec.key_start..spec.key_start + spec.key_len).map(|j| v.row(j)[c]).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let o = out.row(qi)[c];
                    prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_gradients(
        seed in any::<u64>(),
        tq in 1usize..4,
        tk in 1usize..6,
        heads in 1usize..3,
        dh in 1usize..4,
        dist in any::<bool>(),
        shift in any::<bool>(),
    ) {
        let d = heads * dh;
        let mut r = rng(seed);
        let ins = [matrix(&mut r, tq, d), matrix(&mut r, tk, d), matrix(&mut r, tk, d)];
        let score = if dist { Score::Distance } else { Score::Dot };
        let plan = Arc::new(random_plan(seed, tq, tk, shift, score));
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let y = g.attention(v[0], v[1], v[2], heads, plan.clone())?;
            weighted_sum(g, y, seed)
        }).unwrap();
        ok(c, TOL)?;
    }
}

// ---------------------------------------------------------------- losses

#[test]
fn loss_worked_values() {
    assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
    assert_eq!(mae_sum(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 4.0);
    assert_eq!(mse_loss(&[2.0, -1.0], &[2.0, -1.0]).unwrap(), 0.0);
    assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());

    let mut g = Graph::new(GradMode::Frozen);
    let p = g.leaf(Tensor::matrix(2, 1, vec![0.0, 0.0]));
    let l = g.weighted_l1(p, &[1.0, -3.0], &[0.5, 2.0]).unwrap();
    assert_eq!(g.value(l).item(), 6.5);
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn loss_gradients(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let target = uniform(&mut r, n, -2.0, 2.0);
        let weights = uniform(&mut r, n, 0.1, 1.0);
        // keep predictions at least 0.05 away from the L1 kink
        let pred: Vec<f64> = target.iter().map(|t| t + if r.random_bool(0.5) { 1.0 } else { -1.0 } * r.random_range(0.05..1.0)).collect();
        let ins = [Tensor::matrix(n, 1, pred.clone())];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| g.mse(v[0], &target)).unwrap();
        ok(c, TOL)?;
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| g.weighted_l1(v[0], &target, &weights)).unwrap();
        ok(c, TOL)?;

        let analytic = freqcast::nnet::mse_grad(&pred, &target).unwrap();
        for (a, (p, t)) in analytic.iter().zip(pred.iter().zip(&target)) {
            prop_assert!((a - 2.0 * (p - t) / n as f64).abs() < 1e-15);
        }
    }
}

// ---------------------------------------------------------------- Adam

fn two_group_set() -> ParameterSet {
    let mut s = ParameterSet::new();
    s.add("g", Group::Generative, Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]));
    s.add("d", Group::Discriminative, Tensor::matrix(1, 2, vec![0.1, 0.2]));
    s
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut s = two_group_set();
    let before = s.clone();
    let mut st = AdamState::new(&s, Group::Generative);
    adam_step(&mut s, &[Some(vec![0.0; 3]), None], &mut st, &AdamConfig::default()).unwrap();
    assert_eq!(s, before);
}

#[test]
fn adam_first_step_moves_by_lr_against_the_sign() {
    let mut s = two_group_set();
    let before = s.clone();
    let cfg = AdamConfig { lr: 0.01, ..Default::default() };
    let mut st = AdamState::new(&s, Group::Generative);
    let foreign = [Some(vec![3.0, -0.2, 1e-3]), Some(vec![5.0, 5.0])];
    assert!(adam_step(&mut s.clone(), &foreign, &mut st.clone(), &cfg).is_err());
    let grads = [Some(vec![3.0, -0.2, 1e-3]), None];
    adam_step(&mut s, &grads, &mut st, &cfg).unwrap();
    let (old, new) = (before.value(freqcast::nnet::ParamId(0)).data(), s.value(freqcast::nnet::ParamId(0)).data());
    for ((o, n), gr) in old.iter().zip(new).zip(grads[0].as_ref().unwrap()) {
        assert!((n - (o - 0.01 * gr.signum())).abs() < 1e-6, "{o} -> {n}");
    }
    // the other group is untouched, bit for bit
    assert_eq!(s.value(freqcast::nnet::ParamId(1)).data(), before.value(freqcast::nnet::ParamId(1)).data());
}

#[test]
fn adam_converges_on_a_quadratic() {
    let mut s = ParameterSet::new();
    let id = s.add("x", Group::Generative, Tensor::scalar(1.0));
    let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
    let mut st = AdamState::new(&s, Group::Generative);
    for _ in 0..500 {
        let x = s.value(id).item();
        adam_step(&mut s, &[Some(vec![2.0 * x])], &mut st, &cfg).unwrap();
    }
    assert!(s.value(id).item().abs() < 1e-3, "x = {}", s.value(id).item());
}

// ---------------------------------------------------------------- composed models

fn tiny_cfa(seed: u64, score: Score) -> CfaModel {
    let mut r = rng(seed);
    let heads = r.random_range(1..3);
    let cfg = CfaConfig {
        d_model: heads * r.random_range(1..3),
        n_heads: heads,
        n_conv_layers: r.random_range(0..3),
        kernel_size: r.random_range(1..4),
        k: r.random_range(1..3),
        enc_hidden: r.random_range(2..5),
        dec_hidden: r.random_range(2..5),
        disc_hidden: r.random_range(2..5),
        score,
        init_seed: seed,
    };
    let mut m = CfaModel::new(cfg).unwrap();
    // break the key/query tie so both projections get generic gradients
    let ids: Vec<_> = m.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in m.params.value_mut(id).data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    m
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn cfa_forecast_path_gradients(seed in any::<u64>(), dist in any::<bool>(), batch in 1usize..3, tau_c in 4usize..8, tau_f in 1usize..4) {
        let score = if dist { Score::Distance } else { Score::Dot };
        let model = tiny_cfa(seed, score);
        let windows = random_windows(seed, batch, tau_c, tau_f);
        let targets: Vec<f64> = windows.iter().flat_map(|w| w.scaled_target()).collect();
        let gen = model.params.ids_in(Group::Generative);
        let c = check_params(&model.params, Some(&gen), DEFAULT_STEP, |g, set| {
            let mut m = model.clone();
            m.params = set.clone();
            let tf = m.teacher_forced(g, &windows)?;
            g.mse(tf.predictions, &targets)
        }).unwrap();
        ok(c, TOL)?;
    }

    #[test]
    fn cfa_encoder_input_gradients(seed in any::<u64>(), dist in any::<bool>(), t in 3usize..9) {
        let score = if dist { Score::Distance } else { Score::Dot };
        let model = tiny_cfa(seed, score);
        let t = t.max(model.cfg.kernel_size + 1);
        let mut r = rng(seed);
        let ins = [Tensor::column(uniform(&mut r, t, -2.0, 2.0))];
        let c = check_inputs(&ins, DEFAULT_STEP, |g, v| {
            let enc = model.encode(g, v[0], t)?;
            let plan = model.lookup_plan(1, t, 1);
            let (y, _) = model.decode_at(g, &enc, plan)?;
            let a = weighted_sum(g, y, seed)?;
            let kq = g.concat_cols(&[enc.keys, enc.queries, enc.values])?;
            let b = weighted_sum(g, kq, seed + 1)?;
            g.add(a, b)
        }).unwrap();
        ok(c, TOL)?;
    }

    #[test]
    fn discriminator_gradients(seed in any::<u64>(), t in 1usize..7) {
        let model = tiny_cfa(seed, Score::Distance);
        let d = model.cfg.d_model;
        let mut r = rng(seed);
        let kq = [matrix(&mut r, t, d), matrix(&mut r, t, d)];
        let labels = uniform(&mut r, model.cfg.k, 0.05, 1.0);
        let disc = model.params.ids_in(Group::Discriminative);
        let c = check_params(&model.params, Some(&disc), DEFAULT_STEP, |g, set| {
            let mut m = model.clone();
            m.params = set.clone();
            let (k, q) = (g.input(kq[0].clone()), g.input(kq[1].clone()));
            let out = m.cfa_discriminate(g, k, q)?;
            g.mse(out, &labels)
        }).unwrap();
        ok(c, TOL)?;
        let c = check_inputs(&kq, DEFAULT_STEP, |g, v| {
            let out = model.cfa_discriminate(g, v[0], v[1])?;
            g.mse(out, &labels)
        }).unwrap();
        ok(c, TOL)?;
    }

    #[test]
    fn lstm_forecast_path_gradients(seed in any::<u64>(), hidden in 1usize..4, batch in 1usize..3, tau_f in 1usize..4) {
        let model = LstmModel::new(LstmConfig { hidden, init_seed: seed }).unwrap();
        let windows = random_windows(seed, batch, 5, tau_f);
        let targets: Vec<f64> = windows.iter().flat_map(|w| w.scaled_target()).collect();
        let c = check_params(&model.params, None, DEFAULT_STEP, |g, set| {
            let mut m = model.clone();
            m.params = set.clone();
            let y = m.teacher_forced(g, &windows)?;
            g.mse(y, &targets)
        }).unwrap();
        ok(c, TOL)?;
    }
}
