//! Adam optimizer over a flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction. `grads` is the gradient of the
    /// quantity being minimized.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters", self.first_moment.len()),
                format!("params {}, grads {}", params.len(), grads.len()),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to adam_step".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
