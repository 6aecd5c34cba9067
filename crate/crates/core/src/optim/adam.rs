//! Adam with per-group learning-rate multipliers and a step-halving schedule.

use serde::{Deserialize, Serialize};

use crate::tape::ParamTape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `tape`.
/// Each coordinate's step is scaled by its group multiplier.
pub fn adam_step(tape: &mut ParamTape, state: &mut AdamState, lr: f64, hp: &AdamParams) {
    assert_eq!(state.m.len(), tape.len(), "optimizer state does not match the tape");
    state.t += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.t as i32);
    let mult = tape.lr_multipliers();
    let grads = tape.grads().to_vec();
    let values = tape.values_mut();
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        values[i] -= lr * mult[i] * mh / (vh.sqrt() + hp.eps);
    }
}

/// Halves the rate `halvings` times at equal intervals over the first 75%
/// of training, then holds it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub total_steps: usize,
    pub halvings: usize,
}

impl LrSchedule {
    /// Steps between halvings.
    pub fn interval(&self) -> usize {
        if self.halvings == 0 {
            return usize::MAX;
        }
        ((3 * self.total_steps) / (4 * self.halvings)).max(1)
    }

    pub fn halvings_at(&self, step: usize) -> usize {
        (step / self.interval()).min(self.halvings)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.base * 0.5f64.powi(self.halvings_at(step) as i32)
    }
}
