//! Adam with bias correction, decoupled weight decay, and cosine-annealed
//! learning rate.

use super::HarnessError;
use crate::tensor::{ParamStore, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamHyper {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Total optimizer steps in the schedule; the learning rate anneals
    /// from lr0 to 0 over this horizon.
    pub total_steps: u64,
}

impl AdamHyper {
    pub fn new(lr0: f64, beta1: f64, beta2: f64, weight_decay: f64, total_steps: u64) -> Self {
        AdamHyper {
            lr0,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            total_steps: total_steps.max(1),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

/// lr(τ) = lr0 · ½(1 + cos(π τ)) with τ = step/total clamped to [0,1].
pub fn cosine_lr(lr0: f64, step: u64, total_steps: u64) -> f64 {
    let tau = (step as f64 / total_steps.max(1) as f64).clamp(0.0, 1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * tau).cos())
}

/// One optimizer step over every parameter. Parameters without a gradient
/// entry are treated as zero-gradient. Returns the learning rate used.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<f64, HarnessError> {
    for (name, grad) in grads {
        match params.get(name) {
            None => return Err(HarnessError::MissingParam(name.clone())),
            Some(t) if t.shape() != grad.shape() => {
                return Err(HarnessError::GradShape {
                    name: name.clone(),
                    param: t.shape().to_vec(),
                    grad: grad.shape().to_vec(),
                })
            }
            _ => {}
        }
    }
    let lr = cosine_lr(hyper.lr0, state.step, hyper.total_steps);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let zero: Vec<f64> = Vec::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let gslice: &[f64] = match grads.get(&name) {
            Some(g) => g.data(),
            None => &zero,
        };
        let p = params.get_mut(&name).expect("iterating existing names");
        let n = p.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let data = p.data_mut();
        for i in 0..n {
            let gi = if gslice.is_empty() { 0.0 } else { gslice[i] };
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= lr * (mhat / (vhat.sqrt() + hyper.eps) + hyper.weight_decay * data[i]);
        }
    }
    Ok(lr)
}
