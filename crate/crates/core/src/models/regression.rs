use crate::autodiff::Scalar;
use crate::numerics::{spd_inverse_and_logdet, Mat, Vector, LN_SQRT_2PI};
use crate::{Error, Result};

use super::GaussianDist;

/// Unnormalized log joint density `log p(x, z)` over the latent vector `z`.
pub trait TargetModel: Sync {
    fn dim(&self) -> usize;

    fn log_joint<S: Scalar>(&self, z: &[S]) -> S;
}

/// `p(x, z) = exp(log_norm) · N(z; mean, cov)`: a Gaussian posterior with
/// known evidence `exp(log_norm)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    dist: GaussianDist,
    log_norm: f64,
    precision: Vec<f64>,
    mode_value: f64,
}

impl GaussianTarget {
    pub fn new(dist: GaussianDist, log_norm: f64) -> Self {
        let d = dist.dim();
        let precision = (0..d * d).map(|k| dist.inverse()[(k / d, k % d)]).collect();
        let mode_value = log_norm - d as f64 * LN_SQRT_2PI - 0.5 * dist.logdet();
        Self {
            dist,
            log_norm,
            precision,
            mode_value,
        }
    }

    pub fn dist(&self) -> &GaussianDist {
        &self.dist
    }

    /// `log ∫ p(x, z) dz`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn log_joint<S: Scalar>(&self, z: &[S]) -> S {
        let d = self.dim();
        assert_eq!(z.len(), d, "log_joint: wrong dimension");
        let mean = self.dist.mean();
        let diff: Vec<S> = (0..d).map(|i| z[i] - mean[i]).collect();
        let mut quad = diff[0].constant(0.0);
        for i in 0..d {
            let mut row = diff[0] * self.precision[i * d];
            for j in 1..d {
                row = row + diff[j] * self.precision[i * d + j];
            }
            quad = quad + diff[i] * row;
        }
        quad * -0.5 + self.mode_value
    }
}

/// Bayesian linear regression with prior `N(0, σ₀² I)` and unit-variance
/// Gaussian likelihood.
#[derive(Debug, Clone)]
pub struct RegressionTarget {
    design: Mat,
    response: Vector,
    prior_var: f64,
    posterior: GaussianDist,
    log_evidence: f64,
    gaussian: GaussianTarget,
}

impl RegressionTarget {
    pub fn new(design: Mat, response: Vector, prior_var: f64) -> Result<Self> {
        let (n, d) = design.shape();
        if n == 0 || d == 0 {
            return Err(Error::invalid(
                "regression needs at least one observation and one coefficient",
            ));
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: response.len(),
            });
        }
        if !(prior_var > 0.0) || !prior_var.is_finite() {
            return Err(Error::invalid(format!(
                "prior variance must be positive, got {prior_var}"
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite data"));
        }
        let lambda = Mat::identity(d, d) / prior_var + design.transpose() * &design;
        let (cov, logdet_lambda) = spd_inverse_and_logdet(&lambda)
            .map_err(|e| Error::Singular(format!("posterior precision: {e}")))?;
        let xty = design.transpose() * &response;
        let mean = &cov * &xty;
        // log N(y; 0, σ₀² X Xᵀ + I) through the d×d determinant and Woodbury identities
        let quad = response.dot(&response) - mean.dot(&xty);
        let log_evidence = -(n as f64) * LN_SQRT_2PI
            - 0.5 * (d as f64 * prior_var.ln() + logdet_lambda)
            - 0.5 * quad;
        let posterior = GaussianDist::new(mean, cov)?;
        let gaussian = GaussianTarget::new(posterior.clone(), log_evidence);
        Ok(Self {
            design,
            response,
            prior_var,
            posterior,
            log_evidence,
            gaussian,
        })
    }

    pub fn design(&self) -> &Mat {
        &self.design
    }

    pub fn response(&self) -> &Vector {
        &self.response
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// `log N(β; 0, σ₀² I) + Σᵢ log N(yᵢ; xᵢᵀβ, 1)`, evaluated directly.
    pub fn joint_log_density(&self, beta: &[f64]) -> f64 {
        let d = self.design.ncols();
        assert_eq!(beta.len(), d, "joint_log_density: wrong dimension");
        let b = Vector::from_column_slice(beta);
        let prior = -(d as f64) * (LN_SQRT_2PI + 0.5 * self.prior_var.ln())
            - 0.5 * b.dot(&b) / self.prior_var;
        let resid = &self.response - &self.design * &b;
        let lik = -(self.n() as f64) * LN_SQRT_2PI - 0.5 * resid.dot(&resid);
        prior + lik
    }

    /// Gradient of [`Self::joint_log_density`].
    pub fn joint_gradient(&self, beta: &[f64]) -> Vector {
        let b = Vector::from_column_slice(beta);
        let resid = &self.response - &self.design * &b;
        -&b / self.prior_var + self.design.transpose() * resid
    }

    pub fn conjugate_posterior(&self) -> &GaussianDist {
        &self.posterior
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// The same joint density written as `p(x) · p(z | x)`.
    pub fn as_gaussian(&self) -> &GaussianTarget {
        &self.gaussian
    }
}

impl TargetModel for RegressionTarget {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    /// Evaluated as `log p(x) + log p(z | x)`, which is algebraically the
    /// joint density and keeps the tape small.
    fn log_joint<S: Scalar>(&self, z: &[S]) -> S {
        self.gaussian.log_joint(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rng, Tape};

    fn direct_log_evidence(t: &RegressionTarget) -> f64 {
        let x = t.design();
        let n = t.n();
        let cov = x * x.transpose() * t.prior_var() + Mat::identity(n, n);
        let g = GaussianDist::new(Vector::zeros(n), cov).unwrap();
        g.log_pdf(t.response().as_slice())
    }

    fn random_target(rng: &mut Rng, n: usize, d: usize, prior_var: f64) -> RegressionTarget {
        let x = Mat::from_fn(n, d, |_, _| rng.standard_normal());
        let beta = Vector::from_fn(d, |_, _| rng.uniform_range(-3.0, 3.0));
        let y = &x * beta + Vector::from_fn(n, |_, _| 0.3 * rng.standard_normal());
        RegressionTarget::new(x, y, prior_var).unwrap()
    }

    #[test]
    fn single_observation_joint() {
        let t = RegressionTarget::new(Mat::from_element(1, 1, 1.0), Vector::zeros(1), 1.0).unwrap();
        assert!((t.joint_log_density(&[0.0]) + 2.0 * LN_SQRT_2PI).abs() < 1e-15);
    }

    #[test]
    fn zero_design_evidence() {
        let t = RegressionTarget::new(Mat::zeros(1, 1), Vector::zeros(1), 1.0).unwrap();
        assert!((t.log_evidence() + LN_SQRT_2PI).abs() < 1e-15);
        assert_eq!(t.conjugate_posterior().cov()[(0, 0)], 1.0);
        assert_eq!(t.conjugate_posterior().mean()[0], 0.0);
    }

    #[test]
    fn identity_design_posterior() {
        let t = RegressionTarget::new(Mat::identity(2, 2), Vector::from_vec(vec![2.0, 4.0]), 1.0)
            .unwrap();
        let post = t.conjugate_posterior();
        assert!((post.cov() - Mat::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!((post.mean() - Vector::from_vec(vec![1.0, 2.0])).amax() < 1e-15);
        let z = [0.3, -7.0];
        let bayes = t.joint_log_density(&z) - post.log_pdf(&z);
        assert!((bayes - t.log_evidence()).abs() < 1e-12);
    }

    #[test]
    fn evidence_matches_direct_n_by_n() {
        let mut rng = Rng::new(1);
        for &pv in &[1.0, 1e4] {
            let t = random_target(&mut rng, 30, 4, pv);
            assert!((t.log_evidence() - direct_log_evidence(&t)).abs() < 1e-8);
        }
    }

    #[test]
    fn bayes_identity_and_generic_joint() {
        let mut rng = Rng::new(2);
        let t = random_target(&mut rng, 40, 3, 2.0);
        let post = t.conjugate_posterior().clone();
        for _ in 0..50 {
            let z: Vec<f64> = (0..3).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
            let direct = t.joint_log_density(&z);
            assert!((direct - post.log_pdf(&z) - t.log_evidence()).abs() < 1e-8);
            assert!((direct - t.log_joint(&z)).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_analytic_and_tape() {
        let mut rng = Rng::new(3);
        let t = random_target(&mut rng, 20, 3, 1.0);
        for _ in 0..10 {
            let z: Vec<f64> = (0..3).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let analytic = t.joint_gradient(&z);
            let tape = Tape::new();
            let vars: Vec<_> = z.iter().map(|&v| tape.var(v)).collect();
            let out = t.log_joint(&vars);
            let g = tape.gradient(out, &vars).unwrap();
            for k in 0..3 {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[k] += h;
                let mut zm = z.clone();
                zm[k] -= h;
                let fd = (t.joint_log_density(&zp) - t.joint_log_density(&zm)) / (2.0 * h);
                assert!((analytic[k] - fd).abs() < 1e-5 * fd.abs().max(1.0));
                assert!((g[k] - analytic[k]).abs() < 1e-8 * analytic[k].abs().max(1.0));
            }
        }
        let at_mode = t.joint_gradient(t.conjugate_posterior().mean().as_slice());
        assert!(at_mode.amax() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RegressionTarget::new(Mat::zeros(0, 2), Vector::zeros(0), 1.0).is_err());
        assert!(RegressionTarget::new(Mat::zeros(2, 2), Vector::zeros(3), 1.0).is_err());
        assert!(RegressionTarget::new(Mat::zeros(2, 2), Vector::zeros(2), 0.0).is_err());
    }
}
