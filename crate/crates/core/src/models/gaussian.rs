use crate::numerics::{
    cholesky, correlation_from_covariance, spd_inverse_and_logdet, Mat, Rng, Vector, LN_SQRT_2PI,
};
use crate::{Error, Result};

/// Multivariate normal with cached decompositions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: Vector,
    cov: Mat,
    correlation: Mat,
    stds: Vector,
    inverse: Mat,
    logdet: f64,
    chol: Mat,
}

impl GaussianDist {
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("non-finite mean"));
        }
        let (inverse, logdet) = spd_inverse_and_logdet(&cov)?;
        let (correlation, stds) = correlation_from_covariance(&cov)?;
        let chol = cholesky(&cov)?;
        Ok(Self {
            mean,
            cov,
            correlation,
            stds,
            inverse,
            logdet,
            chol,
        })
    }

    pub fn from_correlation(mean: Vector, correlation: &Mat, stds: &Vector) -> Result<Self> {
        let cov = crate::numerics::covariance_from_correlation(correlation, stds);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Mat {
        &self.cov
    }

    pub fn correlation(&self) -> &Mat {
        &self.correlation
    }

    pub fn stds(&self) -> &Vector {
        &self.stds
    }

    pub fn inverse(&self) -> &Mat {
        &self.inverse
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        let x = Vector::from_column_slice(z) - &self.mean;
        -(self.dim() as f64) * LN_SQRT_2PI - 0.5 * self.logdet - 0.5 * x.dot(&(&self.inverse * &x))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vector {
        &self.mean + &self.chol * rng.standard_normal_vec(self.dim())
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        d * (LN_SQRT_2PI + 0.5) + 0.5 * self.logdet
    }
}
