use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer choice and per-block learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_kind")]
    pub kind: OptimizerKind,
    #[serde(default = "default_lr_marginals")]
    pub lr_marginals: f64,
    #[serde(default = "default_lr_copulas")]
    pub lr_copulas: f64,
}

fn default_kind() -> OptimizerKind {
    OptimizerKind::Adam
}

fn default_lr_marginals() -> f64 {
    0.01
}

fn default_lr_copulas() -> f64 {
    0.005
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            lr_marginals: default_lr_marginals(),
            lr_copulas: default_lr_copulas(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for lr in [self.lr_marginals, self.lr_copulas] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::invalid(format!(
                    "learning rate must be finite and >= 0, got {lr}"
                )));
            }
        }
        Ok(())
    }
}

/// Gradient-ascent optimizer state for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn sgd(lr: f64, n: usize) -> Self {
        Self::new(OptimizerKind::Sgd, lr, n)
    }

    pub fn adam(lr: f64, n: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, n)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One ascent step.
    pub fn step(&mut self, params: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: grad.len().min(params.len()),
            });
        }
        self.step += 1;
        Ok(match self.kind {
            OptimizerKind::Sgd => params
                .iter()
                .zip(grad)
                .map(|(p, g)| p + self.lr * g)
                .collect(),
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let mut out = Vec::with_capacity(params.len());
                for i in 0..params.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    out.push(params[i] + self.lr * m_hat / (v_hat.sqrt() + EPS));
                }
                out
            }
        })
    }
}
