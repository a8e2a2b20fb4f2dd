//! Central finite-difference checks for taped computations.

use super::graph::{GradMode, Graph, Var};
use super::params::{ParamId, ParameterSet};
use super::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` (0 when both vanish).
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub n_checked: usize,
}

impl GradCheck {
    fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let (mut diff, mut na, mut nn, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        for &(a, n) in pairs {
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
            max_abs = max_abs.max((a - n).abs());
        }
        let denom = na.sqrt().max(nn.sqrt());
        GradCheck {
            rel_error: if denom == 0.0 { 0.0 } else { diff.sqrt() / denom },
            max_abs_error: max_abs,
            n_checked: pairs.len(),
        }
    }
}

/// Checks the gradient of a scalar `f(inputs)` with respect to every input element.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(GradMode::Frozen);
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(GradMode::Frozen);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out);
    let mut pairs = Vec::new();
    let mut work = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[ti].len()]);
        for (j, a) in analytic.iter().enumerate() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            pairs.push((*a, (up - down) / (2.0 * step)));
        }
    }
    Ok(GradCheck::from_pairs(&pairs))
}

/// Checks the gradient of a scalar `f(set)` with respect to the listed
/// parameters (all parameters when `ids` is `None`).
pub fn check_params<F>(set: &ParameterSet, ids: Option<&[ParamId]>, step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var>,
{
    let all: Vec<ParamId> = set.iter().map(|(id, _)| id).collect();
    let ids = ids.unwrap_or(&all);
    let mut g = Graph::new(GradMode::All);
    let out = f(&mut g, set)?;
    let grads = g.backward(out).by_param(set.len());
    let mut work = set.clone();
    let eval = |s: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new(GradMode::Frozen);
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut pairs = Vec::new();
    for &id in ids {
        let n = set.value(id).len();
        let analytic = grads[id.0].clone().unwrap_or_else(|| vec![0.0; n]);
        for (j, a) in analytic.iter().enumerate() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig;
            pairs.push((*a, (up - down) / (2.0 * step)));
        }
    }
    Ok(GradCheck::from_pairs(&pairs))
}

/// Reduces a tensor-valued output to a scalar with fixed pseudo-random
/// weights so every output element influences the checked gradient.
pub fn weighted_sum(g: &mut Graph, out: Var, salt: u64) -> Result<Var> {
    let t = g.value(out);
    let (r, c) = (t.rows(), t.cols());
    let w: Vec<f64> = (0..r * c)
        .map(|i| ((i as f64 + 1.0) * 0.731 + salt as f64 * 0.37).sin())
        .collect();
    let wv = g.input(Tensor::matrix(r, c, w));
    let prod = g.mul(out, wv)?;
    let flat = g.segment_mean(prod, r, r)?;
    let ones = g.input(Tensor::matrix(c, 1, vec![r as f64; c]));
    g.matmul(flat, ones)
}
