//! Dense small-matrix linear algebra, normal special functions and seeded
//! random sampling.

pub mod dense;
mod linalg;
mod random;
mod special;

pub use linalg::{
    cholesky, correlation_from_covariance, covariance_from_correlation, nearest_correlation,
    partial_correlation, spd_inverse_and_logdet,
};
pub use random::{derive_seed, sample_wishart, Rng};
pub(crate) use special::quantile_unchecked as special_quantile;
pub use special::{normal_cdf, normal_logpdf, normal_pdf, normal_quantile, LN_SQRT_2PI};

/// Dense column-major matrix.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
