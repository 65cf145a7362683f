use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape};
use crate::dvine::{DVineFamily, ParamBlock};
use crate::models::TargetModel;
use crate::numerics::Rng;
use crate::{Error, Result};

/// Largest `α` below the ELBO branch.
const ALPHA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrIwaeConfig {
    /// `α ∈ [0, 0.999]`, or exactly 1 for the ELBO.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_particles() -> usize {
    16
}

impl Default for VrIwaeConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            n_particles: default_particles(),
        }
    }
}

impl VrIwaeConfig {
    pub fn new(alpha: f64, n_particles: usize) -> Result<Self> {
        let cfg = Self { alpha, n_particles };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single-sample-family ELBO (`α = 1`) with `n_particles` averaged draws.
    pub fn elbo(n_particles: usize) -> Self {
        Self {
            alpha: 1.0,
            n_particles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !((0.0..=ALPHA_MAX).contains(&self.alpha) || self.alpha == 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, {ALPHA_MAX}] or equal 1, got {}",
                self.alpha
            )));
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        Ok(())
    }
}

/// `n` base-noise vectors in `(0,1)^d`.
pub fn draw_base_noise(d: usize, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng.uniform_open_vec(d)).collect()
}

/// `log w_j = log p(x, z_j) − log q(z_j)` with `z_j = sample(q, eps_j)`.
pub fn log_weights<M: TargetModel>(q: &DVineFamily, m: &M, eps: &[Vec<f64>]) -> Vec<f64> {
    eps.iter()
        .map(|e| {
            let z = q.sample(e);
            m.log_joint(&z) - q.log_density(&z)
        })
        .collect()
}

/// `(1/(1−α))·[logsumexp((1−α)·log w) − log N]`, or the mean of `log w`
/// on the `α = 1` branch.
pub fn bound_from_log_weights(log_w: &[f64], alpha: f64) -> f64 {
    let n = log_w.len() as f64;
    if alpha == 1.0 {
        return log_w.iter().sum::<f64>() / n;
    }
    let a = 1.0 - alpha;
    let max = log_w
        .iter()
        .map(|&l| a * l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = log_w.iter().map(|&l| (a * l - max).exp()).sum();
    (max + s.ln() - n.ln()) / a
}

/// Self-normalized weights `softmax((1−α)·log w)` (uniform on the ELBO branch).
fn particle_weights(log_w: &[f64], alpha: f64) -> Vec<f64> {
    let n = log_w.len();
    if alpha == 1.0 {
        return vec![1.0 / n as f64; n];
    }
    let a = 1.0 - alpha;
    let max = log_w
        .iter()
        .map(|&l| a * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (a * l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn vr_iwae_estimate<M: TargetModel>(
    q: &DVineFamily,
    m: &M,
    cfg: &VrIwaeConfig,
    rng: &mut Rng,
) -> Result<f64> {
    cfg.validate()?;
    let eps = draw_base_noise(q.dim(), cfg.n_particles, rng);
    Ok(bound_from_log_weights(&log_weights(q, m, &eps), cfg.alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Bound estimate on the same particles.
    pub bound: f64,
    /// Gradient with respect to the active block.
    pub grad: Vec<f64>,
}

/// Reparameterized gradient `Σ_j w̃_j ∇ log w_j` on freshly drawn particles.
pub fn vr_iwae_gradient<M: TargetModel>(
    q: &DVineFamily,
    m: &M,
    cfg: &VrIwaeConfig,
    active: ParamBlock,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let eps = draw_base_noise(q.dim(), cfg.n_particles, rng);
    vr_iwae_gradient_with(q, m, cfg, active, &eps)
}

/// As [`vr_iwae_gradient`] on given base noise. Each particle is
/// differentiated on its own tape; the weights `w̃_j` are plain numbers, so
/// they are not differentiated. Reduction runs in particle order.
pub fn vr_iwae_gradient_with<M: TargetModel>(
    q: &DVineFamily,
    m: &M,
    cfg: &VrIwaeConfig,
    active: ParamBlock,
    eps: &[Vec<f64>],
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let k = q.block_len(active);
    let mut tape = Tape::with_capacity(64 * q.dim() * q.dim());
    let mut log_w = Vec::with_capacity(eps.len());
    let mut grads = Vec::with_capacity(eps.len());
    for e in eps {
        tape.reset();
        let (lw, g) = {
            let s = q.reparam_sample(e, &tape, active)?;
            let lw = m.log_joint(&s.z) - s.lifted.log_density(&s.z);
            (lw.value(), tape.gradient(lw, &s.leaves)?)
        };
        log_w.push(lw);
        grads.push(g);
    }
    let weights = particle_weights(&log_w, cfg.alpha);
    let mut grad = vec![0.0; k];
    for (w, g) in weights.iter().zip(&grads) {
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain {
            op: "vr_iwae_gradient",
            value: f64::NAN,
        });
    }
    Ok(GradientEstimate {
        bound: bound_from_log_weights(&log_w, cfg.alpha),
        grad,
    })
}
