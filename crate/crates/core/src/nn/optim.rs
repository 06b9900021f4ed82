//! Parameter updates and the elastic-net penalty.
//!
//! Optimizers minimise: callers pass the gradient of the loss to minimise,
//! which for training is `-L_D / B` plus the penalty gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lambdas(l1: f64, l2: f64) -> Result<()> {
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "elastic-net coefficients must be non-negative, got l1={l1}, l2={l2}"
        )));
    }
    Ok(())
}

/// `λ1 Σ|w| + λ2 Σ w²`.
pub fn elastic_net_penalty(params: &[f64], l1: f64, l2: f64) -> Result<f64> {
    check_lambdas(l1, l2)?;
    Ok(params.iter().map(|w| l1 * w.abs() + l2 * w * w).sum())
}

/// `λ1 sign(w) + 2 λ2 w` with `sign(0) = 0`.
pub fn elastic_net_grad(params: &[f64], l1: f64, l2: f64) -> Result<Vec<f64>> {
    check_lambdas(l1, l2)?;
    Ok(params
        .iter()
        .map(|&w| {
            let s = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            l1 * s + 2.0 * l2 * w
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    /// Moments are sized from `shapes`, the lengths of the parameter tensors.
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[usize]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step on `params` along `-grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i} changed size")));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= self.learning_rate * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for i in 0..p.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
