use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Three-stage learning-rate schedule: linear warm-up, constant plateau,
/// exponential decay to `peak_lr * final_fraction`, then constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub constant_until: u64,
    pub end_steps: u64,
    pub final_fraction: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 500,
            constant_until: 1_000,
            end_steps: 10_000,
            final_fraction: 0.01,
        }
    }
}

impl LrSchedule {
    /// The schedule used for the large-scale runs (32k / 64k / 200k steps).
    pub fn full_scale() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 32_000,
            constant_until: 64_000,
            end_steps: 200_000,
            final_fraction: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps > 0 && self.warmup_steps <= self.constant_until && self.constant_until <= self.end_steps) {
            return Err(Error::Config(format!(
                "schedule needs 0 < warmup ({}) <= constant_until ({}) <= end ({})",
                self.warmup_steps, self.constant_until, self.end_steps
            )));
        }
        if !(self.peak_lr > 0.0 && self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return Err(Error::Config("schedule needs peak_lr > 0 and final_fraction in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let peak = self.peak_lr;
        if step <= self.warmup_steps {
            peak * step as f64 / self.warmup_steps as f64
        } else if step <= self.constant_until {
            peak
        } else if step <= self.end_steps {
            let span = (self.end_steps - self.constant_until) as f64;
            let frac = (step - self.constant_until) as f64 / span;
            peak * self.final_fraction.powf(frac)
        } else {
            peak * self.final_fraction
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            clip_norm: 0.4,
        }
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamConfig,
    pub moment1: BTreeMap<String, Tensor>,
    pub moment2: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            step: 0,
            config,
            moment1: BTreeMap::new(),
            moment2: BTreeMap::new(),
        }
    }
}

/// Global L2 norm over every gradient.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Invalid(format!("max_norm must be > 0, got {max_norm}")));
    }
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape()),
            ));
        }
        for m in [&state.moment1, &state.moment2] {
            if let Some(t) = m.get(name) {
                if t.shape() != g.shape() {
                    return Err(Error::shape("adam_step", format!("{name}: moment {:?}", t.shape())));
                }
            }
        }
    }
    let step = state.step + 1;
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for (name, g) in grads {
        let m = state
            .moment1
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .moment2
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(name).expect("checked above");
        for (((pv, mv), vv), &gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    state.step = step;
    Ok(())
}
