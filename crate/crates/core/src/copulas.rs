//! Bivariate pair copulas: Gaussian, Clayton and independence.
//!
//! Parameters are stored on an unconstrained scale (`raw`). The Gaussian
//! correlation is `η = tanh(raw)`, the Clayton parameter is `θ = exp(raw)`.
//! Arguments are clamped to `[1e-12, 1 - 1e-12]` before any quantile
//! transform; the public `f64` methods additionally reject arguments outside
//! the open unit interval.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::numerics::Rng;
use crate::{Error, Result};

/// Copula data are clamped to `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Clayton,
    Independence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCopula {
    pub family: CopulaFamily,
    pub raw: f64,
}

pub(crate) fn clamp_unit<S: Scalar>(u: S) -> S {
    let x = u.value();
    if x < CLAMP {
        u.constant(CLAMP)
    } else if x > 1.0 - CLAMP {
        u.constant(1.0 - CLAMP)
    } else {
        u
    }
}

fn check_unit(op: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { op, value: x })
    }
}

impl PairCopula {
    pub fn independence() -> Self {
        Self {
            family: CopulaFamily::Independence,
            raw: 0.0,
        }
    }

    /// Gaussian copula with correlation `eta ∈ (-1, 1)`.
    pub fn gaussian(eta: f64) -> Result<Self> {
        if !(eta.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "Gaussian copula correlation {eta} outside (-1, 1)"
            )));
        }
        Ok(Self {
            family: CopulaFamily::Gaussian,
            raw: eta.atanh(),
        })
    }

    /// Clayton copula with `theta > 0`.
    pub fn clayton(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!(
                "Clayton parameter {theta} must be positive"
            )));
        }
        Ok(Self {
            family: CopulaFamily::Clayton,
            raw: theta.ln(),
        })
    }

    pub fn from_raw(family: CopulaFamily, raw: f64) -> Self {
        let raw = if family == CopulaFamily::Independence {
            0.0
        } else {
            raw
        };
        Self { family, raw }
    }

    /// Builds a copula from its natural-scale parameter (η, θ, or ignored).
    pub fn from_natural(family: CopulaFamily, value: f64) -> Result<Self> {
        match family {
            CopulaFamily::Gaussian => Self::gaussian(value),
            CopulaFamily::Clayton => Self::clayton(value),
            CopulaFamily::Independence => Ok(Self::independence()),
        }
    }

    /// η for Gaussian, θ for Clayton, 0 for independence.
    pub fn natural(&self) -> f64 {
        natural_param(self.family, self.raw)
    }

    pub fn log_density(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("copula log_density", u)?;
        check_unit("copula log_density", v)?;
        Ok(log_density(self.family, self.raw, u, v))
    }

    /// Conditional cdf `h(u | v) = ∂C(u, v)/∂v`.
    pub fn h_function(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("h_function", u)?;
        check_unit("h_function", v)?;
        Ok(h_function(self.family, self.raw, u, v))
    }

    /// Inverse of `u ↦ h(u | v)`.
    pub fn h_inverse(&self, w: f64, v: f64) -> Result<f64> {
        check_unit("h_inverse", w)?;
        check_unit("h_inverse", v)?;
        Ok(h_inverse(self.family, self.raw, w, v))
    }

    pub fn kendall_tau(&self) -> f64 {
        match self.family {
            CopulaFamily::Gaussian => std::f64::consts::FRAC_2_PI * self.natural().asin(),
            CopulaFamily::Clayton => {
                let theta = self.natural();
                theta / (theta + 2.0)
            }
            CopulaFamily::Independence => 0.0,
        }
    }

    /// One draw `(u, v)` from the copula.
    pub fn sample_pair(&self, rng: &mut Rng) -> (f64, f64) {
        let w = rng.uniform_open();
        let v = rng.uniform_open();
        (h_inverse(self.family, self.raw, w, v), v)
    }
}

/// Natural parameter from the raw one.
pub fn natural_param<S: Scalar>(family: CopulaFamily, raw: S) -> S {
    match family {
        CopulaFamily::Gaussian => raw.tanh(),
        CopulaFamily::Clayton => raw.exp(),
        CopulaFamily::Independence => raw.constant(0.0),
    }
}

/// Log copula density with the parameter given on the raw scale.
pub fn log_density<S: Scalar>(family: CopulaFamily, raw: S, u: S, v: S) -> S {
    match family {
        CopulaFamily::Independence => u.constant(0.0),
        CopulaFamily::Gaussian => {
            let eta = raw.tanh();
            let x = clamp_unit(u).normal_quantile();
            let y = clamp_unit(v).normal_quantile();
            let one_minus = eta.square().rsub(1.0);
            let quad = eta.square() * (x.square() + y.square()) - eta * x * y * 2.0;
            one_minus.ln() * -0.5 - quad / (one_minus * 2.0)
        }
        CopulaFamily::Clayton => {
            let theta = raw.exp();
            let u = clamp_unit(u);
            let v = clamp_unit(v);
            let (lu, lv) = (u.ln(), v.ln());
            let s = (lu * -theta).exp() + (lv * -theta).exp() - 1.0;
            (theta + 1.0).ln() - (theta + 1.0) * (lu + lv) - (theta.recip() + 2.0) * s.ln()
        }
    }
}

/// `h(u | v)` with the parameter on the raw scale.
pub fn h_function<S: Scalar>(family: CopulaFamily, raw: S, u: S, v: S) -> S {
    match family {
        CopulaFamily::Independence => u,
        CopulaFamily::Gaussian => {
            let eta = raw.tanh();
            let x = clamp_unit(u).normal_quantile();
            let y = clamp_unit(v).normal_quantile();
            ((x - eta * y) / eta.square().rsub(1.0).sqrt()).normal_cdf()
        }
        CopulaFamily::Clayton => {
            let theta = raw.exp();
            let u = clamp_unit(u);
            let v = clamp_unit(v);
            let (lu, lv) = (u.ln(), v.ln());
            let s = (lu * -theta).exp() + (lv * -theta).exp() - 1.0;
            // v^(-θ-1) · s^(-1/θ - 1)
            (lv * -(theta + 1.0) - s.ln() * (theta.recip() + 1.0)).exp()
        }
    }
}

/// Inverse of [`h_function`] in its first argument.
pub fn h_inverse<S: Scalar>(family: CopulaFamily, raw: S, w: S, v: S) -> S {
    match family {
        CopulaFamily::Independence => w,
        CopulaFamily::Gaussian => {
            let eta = raw.tanh();
            let x = clamp_unit(w).normal_quantile();
            let y = clamp_unit(v).normal_quantile();
            (x * eta.square().rsub(1.0).sqrt() + eta * y).normal_cdf()
        }
        CopulaFamily::Clayton => {
            let theta = raw.exp();
            let w = clamp_unit(w);
            let v = clamp_unit(v);
            let lv = v.ln();
            // ((w v^(θ+1))^(-θ/(1+θ)) - v^(-θ) + 1)^(-1/θ)
            let a = ((w.ln() + lv * (theta + 1.0)) * (-theta / (theta + 1.0))).exp();
            let s = a - (lv * -theta).exp() + 1.0;
            (s.ln() * -theta.recip()).exp()
        }
    }
}
