//! RMSprop.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    /// Decay of the running mean square.
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            rho: 0.99,
            eps: 1e-8,
        }
    }
}

/// Hyperparameters plus one accumulator per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: RmsProp,
    accumulators: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: RmsProp) -> Self {
        Self {
            config,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulator(&self, group: usize) -> Option<&[f64]> {
        self.accumulators.get(group).map(Vec::as_slice)
    }

    /// `acc <- rho acc + (1 - rho) g^2; p <- p - lr g / (sqrt(acc) + eps)`.
    pub fn step(&mut self, group: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.accumulators.len() <= group {
            self.accumulators.resize(group + 1, Vec::new());
        }
        let acc = &mut self.accumulators[group];
        if acc.is_empty() {
            acc.resize(params.len(), 0.0);
        } else if acc.len() != params.len() {
            return Err(Error::Shape(format!(
                "group {group} holds {} accumulators, got {} parameters",
                acc.len(),
                params.len()
            )));
        }
        let RmsProp { lr, rho, eps } = self.config;
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
            *a = rho * *a + (1.0 - rho) * g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
        Ok(())
    }
}

/// One RMSprop update of a single parameter group.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(0, params, grads)
}
