//! Stepwise variational inference with truncated D-vine copula families.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense linear algebra, normal special functions, seeded RNG.
//! - [`autodiff`]: a scalar reverse-mode tape and the [`Scalar`] abstraction
//!   that lets densities and samplers run on plain `f64` or on the tape.
//! - [`copulas`]: Gaussian, Clayton and independence pair copulas.
//! - [`dvine`]: the truncated D-vine variational family.
//! - [`models`]: Bayesian linear regression targets, exact posteriors, data generators.
//! - [`inference`]: VR-IWAE bounds and gradients, optimizers, split-R̂, stepwise fitting.
//! - [`analysis`]: closed-form Gaussian divergences, exact stepwise minimizers,
//!   evaluation metrics and the verification harness.
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod copulas;
pub mod dvine;
mod error;
pub mod inference;
pub mod models;
pub mod numerics;

pub use autodiff::{Scalar, Tape, Var};
pub use copulas::{CopulaFamily, PairCopula};
pub use dvine::{DVineFamily, Marginal};
pub use error::{Error, Result};
pub use numerics::{Mat, Rng, Vector};
