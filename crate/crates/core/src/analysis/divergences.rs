use crate::autodiff::Scalar;
use crate::models::GaussianDist;
use crate::numerics::{dense, spd_inverse_and_logdet, Mat, Vector};
use crate::{Error, Result};

pub(crate) fn row_major(m: &Mat) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|k| m[(k / c, k % c)]).collect()
}

/// Fixed Gaussian `p = N(μ, Σ)` in row-major form for the generic objectives.
#[derive(Debug, Clone)]
pub(crate) struct FixedGaussian {
    pub d: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub inv: Vec<f64>,
    pub logdet: f64,
}

impl FixedGaussian {
    pub fn new(p: &GaussianDist) -> Self {
        Self {
            d: p.dim(),
            mean: p.mean().as_slice().to_vec(),
            cov: row_major(p.cov()),
            inv: row_major(p.inverse()),
            logdet: p.logdet(),
        }
    }
}

fn dot<S: Scalar>(a: &[S], b: &[f64]) -> S {
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// `KL(p ‖ q)` for fixed `p` and `q = N(ν, Ψ)` with `Ψ` row-major.
pub(crate) fn forward_kl<S: Scalar>(p: &FixedGaussian, nu: &[S], psi: &[S]) -> Result<S> {
    let d = p.d;
    let l = dense::cholesky(psi, d)?;
    let inv = dense::cholesky_inverse(&l, d);
    let trace = dot(&inv, &p.cov);
    let diff: Vec<S> = (0..d).map(|i| nu[i].rsub(p.mean[i])).collect();
    let quad = dense::inverse_quadratic_form(&l, d, &diff);
    let logdet = dense::logdet_from_cholesky(&l, d);
    Ok((trace - d as f64 - p.logdet + logdet + quad) * 0.5)
}

/// `KL(q ‖ p)` for fixed `p` and `q = N(ν, Ψ)` with `Ψ` row-major.
pub(crate) fn backward_kl<S: Scalar>(p: &FixedGaussian, nu: &[S], psi: &[S]) -> Result<S> {
    let d = p.d;
    let l = dense::cholesky(psi, d)?;
    let logdet = dense::logdet_from_cholesky(&l, d);
    let trace = dot(psi, &p.inv);
    let diff: Vec<S> = (0..d).map(|i| nu[i] - p.mean[i]).collect();
    let mut quad = diff[0].constant(0.0);
    for i in 0..d {
        let row: Vec<f64> = p.inv[i * d..(i + 1) * d].to_vec();
        quad = quad + diff[i] * dot(&diff, &row);
    }
    Ok((trace - d as f64 - logdet + p.logdet + quad) * 0.5)
}

/// `R_α(q ‖ p)` for fixed `p` and `q = N(ν, Ψ)`.
pub(crate) fn renyi_q_p<S: Scalar>(
    p: &FixedGaussian,
    nu: &[S],
    psi: &[S],
    alpha: f64,
) -> Result<S> {
    let d = p.d;
    let mix: Vec<S> = (0..d * d)
        .map(|k| psi[k] * (1.0 - alpha) + alpha * p.cov[k])
        .collect();
    let lm = dense::cholesky(&mix, d)?;
    let lpsi = dense::cholesky(psi, d)?;
    let diff: Vec<S> = (0..d).map(|i| nu[i] - p.mean[i]).collect();
    let quad = dense::inverse_quadratic_form(&lm, d, &diff);
    let log_ratio = dense::logdet_from_cholesky(&lm, d)
        - dense::logdet_from_cholesky(&lpsi, d) * (1.0 - alpha)
        - alpha * p.logdet;
    Ok(quad * (alpha / 2.0) - log_ratio * (1.0 / (2.0 * (alpha - 1.0))))
}

fn check_dims(a: &GaussianDist, b: &GaussianDist) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// `KL(p ‖ q)`.
pub fn kl_gaussians(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    check_dims(p, q)?;
    forward_kl(
        &FixedGaussian::new(p),
        q.mean().as_slice(),
        &row_major(q.cov()),
    )
}

/// `R_α(p_first ‖ p_second)`, `α ∈ (0, 1)`.
pub fn renyi_gaussians(p_first: &GaussianDist, p_second: &GaussianDist, alpha: f64) -> Result<f64> {
    check_dims(p_first, p_second)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "Rényi order must lie in (0, 1), got {alpha}"
        )));
    }
    renyi_q_p(
        &FixedGaussian::new(p_second),
        p_first.mean().as_slice(),
        &row_major(p_first.cov()),
        alpha,
    )
}

/// `diag(Ψ) − diag(Φ_α⁻¹)` with `Φ_α = αΨ⁻¹ + (1−α)Σ⁻¹` and diagonal `Ψ`.
pub fn renyi_fixed_point_residual(psi_diag: &Vector, sigma: &Mat, alpha: f64) -> Result<Vector> {
    if psi_diag.len() != sigma.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sigma.nrows(),
            actual: psi_diag.len(),
        });
    }
    if psi_diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("diagonal variances must be positive"));
    }
    let (sigma_inv, _) = spd_inverse_and_logdet(sigma)?;
    let phi = Mat::from_diagonal(&psi_diag.map(|v| alpha / v)) + sigma_inv * (1.0 - alpha);
    let (phi_inv, _) = spd_inverse_and_logdet(&phi)?;
    Ok(psi_diag - phi_inv.diagonal())
}
