//! Closed-form Gaussian divergences, exact (Monte-Carlo-free) stepwise
//! minimizers, evaluation metrics and the verification harness.

mod divergences;
mod exact;
mod metrics;
mod minimize;
mod verify;

pub use divergences::{kl_gaussians, renyi_fixed_point_residual, renyi_gaussians};
pub use exact::{
    minimize_renyi_diagonal, stepwise_exact_fit, tree_stage_gradient, DiagonalRenyiFit, ExactFit,
    KlDirection, StepwiseObjective,
};
pub use metrics::{delta_kl_rel, mean_rel_rmse_std, DeltaKl};
pub use minimize::{minimize, Minimum, Objective};
pub use verify::{run_verification, CheckResult, VerificationManifest, VerifyOptions};
