use super::tensor::Tensor;
use crate::{Error, Result};

/// Momentum SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

/// Per-parameter velocity buffers, created lazily on the first step.
#[derive(Debug, Clone, Default)]
pub struct Velocity {
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Validation(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum })
    }

    /// `v <- momentum * v + g; p <- p - lr * v`, parameter by parameter in
    /// slice order.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], state: &mut Velocity) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "sgd_step: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if state.buffers.is_empty() {
            state.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::contract(format!(
                    "sgd_step: gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let v = &mut state.buffers[i];
            for (vj, gj) in v.iter_mut().zip(g.data()) {
                *vj = self.momentum * *vj + gj;
            }
            for (pj, vj) in p.data_mut().iter_mut().zip(v.iter()) {
                *pj -= self.lr * vj;
            }
        }
        Ok(())
    }
}
