//! Adaptive-moment optimizer with RAdam variance rectification.
//!
//! While the rectification term ρ_t is not yet tractable (ρ_t ≤ 4) the update
//! falls back to the bias-corrected first moment alone; afterwards the usual
//! rectified adaptive step applies. Plain Adam is selectable.

use crate::error::{Error, Result};
use crate::model::OptimizerKind;
use crate::params::ParamSet;

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    rho_inf: f64,
    states: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, set: &ParamSet) -> Optimizer {
        let beta2 = 0.999;
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2,
            eps: 1e-8,
            t: 0,
            rho_inf: 2.0 / (1.0 - beta2) - 1.0,
            states: set
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every non-skipped parameter. `grads` is parallel to
    /// the set; a non-finite gradient aborts naming the parameter.
    pub fn step(&mut self, set: &mut ParamSet, grads: &[Vec<f64>], skip: &[bool]) -> Result<()> {
        assert_eq!(grads.len(), set.len());
        assert_eq!(skip.len(), set.len());
        self.t += 1;
        let t = self.t as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let rho_t = self.rho_inf - 2.0 * t * self.beta2.powf(t) / bias2;
        let rect = if rho_t > 4.0 {
            Some(
                ((rho_t - 4.0) * (rho_t - 2.0) * self.rho_inf
                    / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for idx in 0..set.len() {
            if skip[idx] {
                continue;
            }
            let grad = &grads[idx];
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    format!("optimizer step {} parameter {}", self.t, set.at(idx).name),
                    format!("non-finite gradient {bad}"),
                ));
            }
            let state = &mut self.states[idx];
            let values = &mut set.at_mut(idx).values;
            for j in 0..values.len() {
                let g = grad[j];
                state.m[j] = self.beta1 * state.m[j] + (1.0 - self.beta1) * g;
                state.v[j] = self.beta2 * state.v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[j] / bias1;
                let delta = match self.kind {
                    OptimizerKind::RAdam => match rect {
                        Some(r) => {
                            let l = bias2.sqrt() / (state.v[j].sqrt() + self.eps);
                            self.lr * r * l * m_hat
                        }
                        None => self.lr * m_hat,
                    },
                    OptimizerKind::Adam => {
                        let v_hat = state.v[j] / bias2;
                        self.lr * m_hat / (v_hat.sqrt() + self.eps)
                    }
                };
                values[j] -= delta;
            }
        }
        Ok(())
    }
}

/// Scales all gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm_sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
