//! SGD with momentum, L2 weight decay and a cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(())
    }

    /// Cosine-annealed rate `lr0 · ½(1 + cos(π t / T))`.
    pub fn lr(&self, step: usize) -> f64 {
        let frac = step as f64 / self.total_steps as f64;
        self.lr0 * 0.5 * (1.0 + (PI * frac).cos())
    }
}

/// Momentum buffers, one per parameter name.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }
}

/// One update: `v ← μ·v + g + λ·p`, then `p ← p − lr(t)·v`.
///
/// Parameters without an entry in `grads` are left untouched.
pub fn sgd_step(
    params: &mut Params,
    grads: &Grads,
    state: &mut SgdState,
    config: &SgdConfig,
    step: usize,
) -> Result<()> {
    if step >= config.total_steps {
        return Err(Error::ScheduleExhausted {
            step,
            total: config.total_steps,
        });
    }
    let lr = config.lr(step);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.len() != p.len() {
            return Err(Error::shape("sgd_step", p.shape(), &[g.len()]));
        }
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vv = config.momentum * *vv + gv + config.weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
