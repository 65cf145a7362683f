use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vinevi::inference::{
    GcviConfig, MonitorConfig, OptimizerConfig, StepwiseConfig, StopRule, VrIwaeConfig,
};
use vinevi::models::{DatasetKind, DatasetSpec, WishartBase};

use crate::{CliError, CliResult};

/// α values of the sweep protocol.
pub const DEFAULT_ALPHAS: [f64; 11] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Independence,
    Needle,
    AlphaSweep,
    VerifyTheorems,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    StepwiseVine,
    /// Gaussian mean-field fitted with the ELBO.
    Mf,
    Gcvi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// One Wishart-Gaussian example per seed.
    #[serde(default = "default_sweep_seeds")]
    pub dataset_seeds: Vec<u64>,
    #[serde(default = "default_base")]
    pub base: WishartBase,
    /// Pin the marginals to the exact posterior and fit only the trees.
    #[serde(default = "yes")]
    pub oracle_marginals: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

fn default_sweep_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_base() -> WishartBase {
    WishartBase::C1
}

fn yes() -> bool {
    true
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            dataset_seeds: default_sweep_seeds(),
            base: default_base(),
            oracle_marginals: true,
            n: None,
        }
    }
}

/// One experiment. Every optional field has a default that is written back
/// into the outputs by [`ExperimentSpec::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub method: Method,
    pub seed: u64,
    #[serde(default)]
    pub vr: VrIwaeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcvi: Option<GcviConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    /// Directory holding `dataset.csv` and `dataset.json` from `gen-data`;
    /// takes precedence over `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub quick: bool,
}

fn default_max_iters() -> usize {
    50_000
}

fn default_samples() -> usize {
    10_000
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            method: Method::default(),
            seed,
            vr: VrIwaeConfig::default(),
            optimizer: OptimizerConfig::default(),
            monitor: MonitorConfig::default(),
            stop: StopRule::default(),
            max_iters: default_max_iters(),
            max_tree: None,
            gcvi: None,
            dataset: None,
            dataset_dir: None,
            output_dir: None,
            n_samples: default_samples(),
            sweep: None,
            quick: false,
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.vr.validate()?;
        self.optimizer.validate()?;
        self.monitor.validate()?;
        self.stepwise_config().validate()?;
        if let Some(g) = &self.gcvi {
            g.validate()?;
        }
        if self.kind == ExperimentKind::Custom
            && self.dataset.is_none()
            && self.dataset_dir.is_none()
        {
            return Err(CliError::Spec(
                "custom experiments need a dataset or dataset_dir".into(),
            ));
        }
        if let Some(ds) = &self.dataset {
            ds.resolved()?;
        }
        if let Some(s) = &self.sweep {
            if s.alphas.is_empty() || s.dataset_seeds.is_empty() {
                return Err(CliError::Spec(
                    "sweep needs at least one alpha and one dataset seed".into(),
                ));
            }
            for &a in &s.alphas {
                VrIwaeConfig::new(a, self.vr.n_particles)?;
            }
        }
        Ok(())
    }

    /// Dataset this experiment fits, with every default filled in.
    pub fn dataset_spec(&self) -> CliResult<DatasetSpec> {
        let spec = match (&self.dataset, self.kind) {
            (Some(ds), _) => ds.clone(),
            (None, ExperimentKind::Independence) => DatasetSpec::independence(self.seed),
            (None, ExperimentKind::Needle) => DatasetSpec::needle(self.seed),
            (None, _) => {
                return Err(CliError::Spec(format!(
                    "experiment kind {:?} needs an explicit dataset",
                    self.kind
                )))
            }
        };
        Ok(spec.resolved()?)
    }

    pub fn stepwise_config(&self) -> StepwiseConfig {
        StepwiseConfig {
            vr: self.vr,
            optimizer: self.optimizer,
            monitor: self.monitor,
            max_iters: self.max_iters,
            max_tree: self.max_tree,
            stop: self.stop,
            seed: self.seed,
        }
    }

    pub fn gcvi_config(&self) -> GcviConfig {
        let mut cfg = self
            .gcvi
            .clone()
            .unwrap_or_else(|| GcviConfig::new(self.seed));
        cfg.seed = self.seed;
        cfg
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        self.sweep.clone().unwrap_or_default()
    }

    /// Copy with all defaults made explicit, for echoing into outputs.
    pub fn resolved(&self) -> CliResult<Self> {
        let mut out = self.clone();
        match self.kind {
            ExperimentKind::AlphaSweep => out.sweep = Some(self.sweep_spec()),
            ExperimentKind::VerifyTheorems => {}
            _ if self.dataset_dir.is_none() => out.dataset = Some(self.dataset_spec()?),
            _ => {}
        }
        if self.method == Method::Gcvi {
            out.gcvi = Some(self.gcvi_config());
        }
        Ok(out)
    }
}

/// Dataset of one α-sweep example.
pub fn sweep_dataset(sweep: &SweepSpec, seed: u64) -> DatasetSpec {
    let mut ds = DatasetSpec::new(DatasetKind::WishartGaussian, seed);
    ds.wishart_base = Some(sweep.base);
    ds.n = sweep.n;
    ds
}
