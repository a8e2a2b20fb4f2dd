use serde::{Deserialize, Serialize};

use super::params::{Group, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for the parameters of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    group: Group,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(set: &ParameterSet, group: Group) -> Self {
        let zeros: Vec<Vec<f64>> = set
            .iter()
            .map(|(_, p)| if p.group == group { vec![0.0; p.value.len()] } else { Vec::new() })
            .collect();
        AdamState {
            group,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `state.group()`'s parameters.
///
/// `grads` is indexed by parameter id. Missing entries count as zero
/// gradients; a gradient for a parameter outside the group is an error.
pub fn adam_step(set: &mut ParameterSet, grads: &[Option<Vec<f64>>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != set.len() || state.m.len() != set.len() {
        return Err(Error::contract(format!(
            "{} gradients / {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            set.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let p = set.get(super::ParamId(i));
        if let Some(g) = g {
            if p.group != state.group {
                return Err(Error::contract(format!(
                    "gradient supplied for {:?} outside group {:?}",
                    p.name, state.group
                )));
            }
            if g.len() != p.value.len() {
                return Err(Error::contract(format!("gradient size mismatch for {:?}", p.name)));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let value = set.value_mut(super::ParamId(i)).data_mut();
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            value[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
