//! VR-IWAE bounds and gradients, optimizers, convergence monitoring and the
//! stepwise, mean-field and GC-VI fitting procedures.

mod fit;
mod optim;
mod rhat;
mod vr_iwae;

pub use fit::{
    fit_mean_field, fit_stage, gcvi_fit, global_criterion, stepwise_fit, BlockReport, GcviConfig,
    GcviReport, StageOutcome, StageReport, StageResult, StepwiseConfig, StepwiseReport, StopReason,
    StopRule,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use rhat::{split_rhat, split_rhat_window, MonitorConfig, RhatMonitor, RhatStatus};
pub use vr_iwae::{
    bound_from_log_weights, draw_base_noise, log_weights, vr_iwae_estimate, vr_iwae_gradient,
    vr_iwae_gradient_with, GradientEstimate, VrIwaeConfig,
};
