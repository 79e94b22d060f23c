use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Adam hyperparameters. Defaults follow the usual convention; only the
/// learning rate and the l2 weight are normally tuned.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of a squared-l2 penalty; 2*l2*w is added to the gradient
    /// of every parameter flagged for decay before the moment update.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

/// Per-parameter Adam accumulators, keyed by a caller-chosen stable index.
///
/// Parameters that sit out an update (the other player's weights during an
/// alternating step) keep their accumulators and step count untouched.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    slots: Vec<Option<Slot>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            slots: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one bias-corrected update to `param`. `grad` must be present
    /// and shaped like the parameter; `decay` selects whether the l2 term
    /// applies to this parameter.
    pub fn step(
        &mut self,
        index: usize,
        param: &mut Matrix,
        grad: Option<&[f64]>,
        decay: bool,
    ) -> Result<()> {
        let grad = grad.ok_or_else(|| {
            Error::contract(format!("adam step: missing gradient for parameter {index}"))
        })?;
        if grad.len() != param.len() {
            return Err(Error::dimension(
                "adam_step",
                format!(
                    "gradient of {} values for a parameter of {}",
                    grad.len(),
                    param.len()
                ),
            ));
        }
        if self.slots.len() <= index {
            self.slots.resize(index + 1, None);
        }
        let slot = self.slots[index].get_or_insert_with(|| Slot {
            first: vec![0.0; grad.len()],
            second: vec![0.0; grad.len()],
            step: 0,
        });
        if slot.first.len() != grad.len() {
            return Err(Error::dimension(
                "adam_step",
                format!("parameter {index} changed size"),
            ));
        }
        slot.step += 1;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(slot.step as i32);
        let bias2 = 1.0 - c.beta2.powi(slot.step as i32);
        let l2 = if decay { c.l2 } else { 0.0 };
        let values = param.data_mut();
        for i in 0..values.len() {
            let g = grad[i] + 2.0 * l2 * values[i];
            slot.first[i] = c.beta1 * slot.first[i] + (1.0 - c.beta1) * g;
            slot.second[i] = c.beta2 * slot.second[i] + (1.0 - c.beta2) * g * g;
            let m_hat = slot.first[i] / bias1;
            let v_hat = slot.second[i] / bias2;
            values[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }

    /// Step count recorded for a parameter, zero before its first update.
    pub fn step_count(&self, index: usize) -> u64 {
        self.slots
            .get(index)
            .and_then(|s| s.as_ref())
            .map(|s| s.step)
            .unwrap_or(0)
    }
}
