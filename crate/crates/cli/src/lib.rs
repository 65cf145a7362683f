//! Experiment runner for stepwise vine-copula VI: dataset generation,
//! fitting, α-sweeps and the numerical verification harness. Every command
//! reads a JSON [`ExperimentSpec`] and writes plain files.

mod commands;
mod spec;

use std::path::PathBuf;

pub use commands::{
    cmd_alpha_sweep, cmd_fit, cmd_gen_data, cmd_verify, FitMetrics, FitOutput, FitReport,
    MethodReport, SweepCell, VerifyOutcome,
};
pub use spec::{sweep_dataset, ExperimentKind, ExperimentSpec, Method, SweepSpec, DEFAULT_ALPHAS};

/// `git describe` of the build, or `unknown`.
pub const BUILD_ID: &str = env!("VINEVI_BUILD");

/// Version of the samples / sweep CSV layouts.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vinevi::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid experiment spec: {0}")]
    Spec(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
