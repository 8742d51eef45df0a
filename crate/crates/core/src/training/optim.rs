use std::collections::BTreeMap;

use super::TrainError;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Biases and layernorm gains/biases are never decayed.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains("_norm."))
}

/// Moments keyed by parameter name, plus the shared step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops moments for parameters that no longer exist, e.g. a discarded head.
    pub fn retain(&mut self, names: &[&str]) {
        self.m.retain(|k, _| names.contains(&k.as_str()));
        self.v.retain(|k, _| names.contains(&k.as_str()));
    }
}

/// One decoupled-decay Adam update over every named parameter, reading
/// gradients from each tensor's `grad` buffer (absent means zero).
///
/// ```text
/// m <- b1 m + (1 - b1) g          m^ = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2        v^ = v / (1 - b2^t)
/// w <- w - lr m^ / (sqrt(v^) + eps) - lr wd w
/// ```
/// The decay term uses the pre-update weight. Gradients are checked for
/// finiteness before anything is modified.
pub fn adamw_step(
    params: &mut [(&str, &mut Tensor)],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.len() != t.numel() {
                return Err(TrainError::Config(format!("gradient of {name} has the wrong length")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::Numeric { param: name.to_string() });
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, tensor) in params.iter_mut() {
        let n = tensor.numel();
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n {
            *m = vec![0.0; n];
            *v = vec![0.0; n];
        }
        let wd = if decays(name) { weight_decay } else { 0.0 };
        let (w, grad) = tensor.data_and_grad_mut();
        for i in 0..n {
            let g = grad.map_or(0.0, |g| g[i]);
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS) - lr * wd * w[i];
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [(&str, &mut Tensor)], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    total
}

/// Number of warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total_steps as f64).round() as usize
}

/// Linear warmup from 0 to `base_lr`, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    let warmup = warmup_steps(total_steps, warmup_fraction);
    let step = step.min(total_steps);
    if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else if total_steps == warmup {
        base_lr
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}
