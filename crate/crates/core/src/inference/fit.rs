use serde::{Deserialize, Serialize};

use crate::copulas::{CopulaFamily, PairCopula};
use crate::dvine::{DVineFamily, Marginal, ParamBlock};
use crate::models::TargetModel;
use crate::numerics::Rng;
use crate::{Error, Result};

use super::optim::{OptimizerConfig, OptimizerState};
use super::rhat::{MonitorConfig, RhatMonitor, RhatStatus};
use super::vr_iwae::{vr_iwae_gradient, VrIwaeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Converged,
    MaxItersExceeded,
    /// Block supplied by the caller and not optimized.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub family: DVineFamily,
    pub iterations: usize,
    pub outcome: StageOutcome,
    /// Mean bound estimate over the snapshots in the final window.
    pub final_bound: f64,
    /// Largest split-R̂ at the last check (`None` before the window fills or
    /// when degenerate).
    pub last_rhat: Option<f64>,
}

/// Optimizes one parameter block until every monitored split-R̂ drops below
/// the threshold or `max_iters` is reached. Only `active` changes. The
/// returned parameters are the mean of the monitor window once it is full.
#[allow(clippy::too_many_arguments)]
pub fn fit_stage<M: TargetModel>(
    q: &DVineFamily,
    m: &M,
    cfg: &VrIwaeConfig,
    active: ParamBlock,
    opt: &mut OptimizerState,
    monitor: MonitorConfig,
    max_iters: usize,
    rng: &mut Rng,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut monitor = RhatMonitor::new(monitor)?;
    let mut params = q.block_params(active)?;
    let mut current = q.clone();
    let mut bounds: Vec<f64> = Vec::new();
    let mut outcome = StageOutcome::MaxItersExceeded;
    let mut last_rhat = None;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let ge = vr_iwae_gradient(&current, m, cfg, active, rng)?;
        params = opt.step(&params, &ge.grad)?;
        current = current.with_block_params(active, &params)?;
        if let Some(status) = monitor.observe(&params) {
            bounds.push(ge.bound);
            match status {
                RhatStatus::Converged => {
                    outcome = StageOutcome::Converged;
                    last_rhat = monitor_max(&monitor);
                    break;
                }
                RhatStatus::NotConverged(r) => last_rhat = Some(r),
                RhatStatus::Filling | RhatStatus::Degenerate => last_rhat = None,
            }
        }
    }
    if monitor.is_full() {
        let avg = monitor.window_mean().expect("full window");
        current = current.with_block_params(active, &avg)?;
    }
    let keep = bounds.len().min(monitor_len(&monitor));
    let tail = &bounds[bounds.len() - keep..];
    let final_bound = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(StageResult {
        family: current,
        iterations,
        outcome,
        final_bound,
        last_rhat,
    })
}

fn monitor_len(m: &RhatMonitor) -> usize {
    m.snapshots().count()
}

fn monitor_max(m: &RhatMonitor) -> Option<f64> {
    let snaps: Vec<Vec<f64>> = m.snapshots().cloned().collect();
    super::rhat::split_rhat_window(&snaps)
        .into_iter()
        .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r)))
}

/// Global stopping rule applied to a freshly fitted tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    /// Cutoff on |η| when every copula in the tree is Gaussian.
    #[serde(default = "default_eta_threshold")]
    pub eta_threshold: f64,
    /// Cutoff on |Kendall τ| otherwise.
    #[serde(default = "default_kendall_cutoff")]
    pub kendall_cutoff: f64,
    /// Keep the tree that triggered the stop instead of discarding it.
    #[serde(default)]
    pub retain_trigger_tree: bool,
}

fn default_eta_threshold() -> f64 {
    0.1
}

fn default_kendall_cutoff() -> f64 {
    2.0 / std::f64::consts::PI * 0.1f64.asin()
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            eta_threshold: default_eta_threshold(),
            kendall_cutoff: default_kendall_cutoff(),
            retain_trigger_tree: false,
        }
    }
}

/// True when every pair copula of `tree` is below the cutoff.
pub fn global_criterion(tree: &[PairCopula], rule: &StopRule) -> bool {
    let all_gaussian = tree.iter().all(|c| c.family != CopulaFamily::Clayton);
    if all_gaussian {
        tree.iter().all(|c| {
            c.natural().abs() < rule.eta_threshold || c.family == CopulaFamily::Independence
        })
    } else {
        tree.iter()
            .all(|c| c.kendall_tau().abs() < rule.kendall_cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepwiseConfig {
    #[serde(default)]
    pub vr: VrIwaeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    /// Iteration cap per stage.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Highest tree to fit (defaults to `d − 1`).
    #[serde(default)]
    pub max_tree: Option<usize>,
    #[serde(default)]
    pub stop: StopRule,
    pub seed: u64,
}

fn default_max_iters() -> usize {
    50_000
}

impl StepwiseConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            vr: VrIwaeConfig::default(),
            optimizer: OptimizerConfig::default(),
            monitor: MonitorConfig::default(),
            max_iters: default_max_iters(),
            max_tree: None,
            stop: StopRule::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vr.validate()?;
        self.optimizer.validate()?;
        self.monitor.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GlobalCriterion,
    MaxTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// 0 for the marginals, `t` for tree `t`.
    pub stage: usize,
    pub iterations: usize,
    pub outcome: StageOutcome,
    pub final_bound: f64,
    /// Largest |natural parameter| of the fitted tree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseReport {
    pub family: DVineFamily,
    pub stages: Vec<StageReport>,
    pub stop_reason: StopReason,
    /// Tree whose fit triggered the global criterion.
    pub stop_tree: Option<usize>,
}

fn optimizer_for(cfg: &OptimizerConfig, block: ParamBlock, n: usize) -> OptimizerState {
    let lr = match block {
        ParamBlock::Marginals => cfg.lr_marginals,
        _ => cfg.lr_copulas,
    };
    OptimizerState::new(cfg.kind, lr, n)
}

/// Fits the marginals of a mean-field family, then tree after tree with all
/// earlier stages frozen, stopping when a fitted tree is near independence.
/// With `fixed_marginals` the marginal stage is skipped.
pub fn stepwise_fit<M: TargetModel>(
    m: &M,
    cfg: &StepwiseConfig,
    fixed_marginals: Option<&[Marginal]>,
) -> Result<StepwiseReport> {
    cfg.validate()?;
    let d = m.dim();
    if d < 2 {
        return Err(Error::invalid("stepwise fitting needs d >= 2"));
    }
    let mut stages = Vec::new();
    let mut q = DVineFamily::mean_field(d);
    match fixed_marginals {
        Some(marg) => {
            q = q.with_marginals(marg.to_vec())?;
            stages.push(StageReport {
                stage: 0,
                iterations: 0,
                outcome: StageOutcome::Fixed,
                final_bound: f64::NAN,
                max_abs_eta: None,
            });
        }
        None => {
            let mut rng = Rng::with_stream(cfg.seed, 0);
            let mut opt = optimizer_for(&cfg.optimizer, ParamBlock::Marginals, 2 * d);
            let r = fit_stage(
                &q,
                m,
                &cfg.vr,
                ParamBlock::Marginals,
                &mut opt,
                cfg.monitor,
                cfg.max_iters,
                &mut rng,
            )?;
            stages.push(StageReport {
                stage: 0,
                iterations: r.iterations,
                outcome: r.outcome,
                final_bound: r.final_bound,
                max_abs_eta: None,
            });
            q = r.family;
        }
    }
    let tau_max = cfg.max_tree.unwrap_or(d - 1).min(d - 1);
    for t in 1..=tau_max {
        let extended = q.extend(vec![
            PairCopula::from_raw(CopulaFamily::Gaussian, 0.0);
            d - t
        ])?;
        let mut rng = Rng::with_stream(cfg.seed, t as u64);
        let mut opt = optimizer_for(&cfg.optimizer, ParamBlock::Tree(t), d - t);
        let r = fit_stage(
            &extended,
            m,
            &cfg.vr,
            ParamBlock::Tree(t),
            &mut opt,
            cfg.monitor,
            cfg.max_iters,
            &mut rng,
        )?;
        let tree = r.family.tree(t).expect("tree just fitted");
        let max_abs_eta = tree.iter().map(|c| c.natural().abs()).fold(0.0, f64::max);
        let triggered = global_criterion(tree, &cfg.stop);
        stages.push(StageReport {
            stage: t,
            iterations: r.iterations,
            outcome: r.outcome,
            final_bound: r.final_bound,
            max_abs_eta: Some(max_abs_eta),
        });
        if triggered {
            let family = if cfg.stop.retain_trigger_tree {
                r.family
            } else {
                r.family.truncate(t - 1)?
            };
            return Ok(StepwiseReport {
                family,
                stages,
                stop_reason: StopReason::GlobalCriterion,
                stop_tree: Some(t),
            });
        }
        q = r.family;
    }
    Ok(StepwiseReport {
        family: q,
        stages,
        stop_reason: StopReason::MaxTree,
        stop_tree: None,
    })
}

/// Mean-field fit: the marginal stage alone.
pub fn fit_mean_field<M: TargetModel>(m: &M, cfg: &StepwiseConfig) -> Result<StageResult> {
    cfg.validate()?;
    let d = m.dim();
    let mut rng = Rng::with_stream(cfg.seed, 0);
    let mut opt = optimizer_for(&cfg.optimizer, ParamBlock::Marginals, 2 * d);
    fit_stage(
        &DVineFamily::mean_field(d),
        m,
        &cfg.vr,
        ParamBlock::Marginals,
        &mut opt,
        cfg.monitor,
        cfg.max_iters,
        &mut rng,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcviConfig {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Stop a block when consecutive window means move less than this.
    #[serde(default = "default_param_tol")]
    pub param_tol: f64,
    /// Particles per ELBO gradient.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Iterations per averaging window.
    #[serde(default = "default_block_window")]
    pub block_window: usize,
    #[serde(default = "default_gcvi_max_iters")]
    pub max_iters_per_block: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_rounds() -> usize {
    2
}

fn default_param_tol() -> f64 {
    1e-3
}

fn default_mc_samples() -> usize {
    10
}

fn default_block_window() -> usize {
    100
}

fn default_gcvi_max_iters() -> usize {
    20_000
}

impl GcviConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            rounds: default_rounds(),
            param_tol: default_param_tol(),
            mc_samples: default_mc_samples(),
            block_window: default_block_window(),
            max_iters_per_block: default_gcvi_max_iters(),
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.mc_samples == 0 || self.block_window == 0 {
            return Err(Error::invalid(
                "GC-VI needs positive mc_samples and block_window",
            ));
        }
        if !(self.param_tol > 0.0) {
            return Err(Error::invalid("GC-VI parameter tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub round: usize,
    pub block: ParamBlock,
    pub iterations: usize,
    pub outcome: StageOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcviReport {
    pub family: DVineFamily,
    pub blocks: Vec<BlockReport>,
}

/// Gaussian-copula VI baseline: a full (`τ = d − 1`) Gaussian D-vine whose
/// marginal block and whole copula block are optimized alternately with
/// the ELBO.
pub fn gcvi_fit<M: TargetModel>(m: &M, cfg: &GcviConfig) -> Result<GcviReport> {
    cfg.validate()?;
    let d = m.dim();
    if d < 2 {
        return Err(Error::invalid("GC-VI needs d >= 2"));
    }
    let trees = (1..d)
        .map(|t| vec![PairCopula::from_raw(CopulaFamily::Gaussian, 0.0); d - t])
        .collect();
    let mut q = DVineFamily::new(vec![Marginal::default(); d], trees)?;
    let vr = VrIwaeConfig::elbo(cfg.mc_samples);
    let mut blocks = Vec::new();
    for round in 0..cfg.rounds {
        for (b, block) in [ParamBlock::Marginals, ParamBlock::AllTrees]
            .into_iter()
            .enumerate()
        {
            let mut rng = Rng::with_stream(cfg.seed, (2 * round + b) as u64);
            let mut opt = optimizer_for(&cfg.optimizer, block, q.block_len(block));
            let (next, iterations, outcome) =
                fit_block_to_tolerance(&q, m, &vr, block, &mut opt, cfg, &mut rng)?;
            q = next;
            blocks.push(BlockReport {
                round,
                block,
                iterations,
                outcome,
            });
        }
    }
    Ok(GcviReport { family: q, blocks })
}

fn fit_block_to_tolerance<M: TargetModel>(
    q: &DVineFamily,
    m: &M,
    vr: &VrIwaeConfig,
    block: ParamBlock,
    opt: &mut OptimizerState,
    cfg: &GcviConfig,
    rng: &mut Rng,
) -> Result<(DVineFamily, usize, StageOutcome)> {
    let mut params = q.block_params(block)?;
    let mut current = q.clone();
    let mut sum = vec![0.0; params.len()];
    let mut prev_mean: Option<Vec<f64>> = None;
    let mut last_mean: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut outcome = StageOutcome::MaxItersExceeded;
    while iterations < cfg.max_iters_per_block {
        iterations += 1;
        let ge = vr_iwae_gradient(&current, m, vr, block, rng)?;
        params = opt.step(&params, &ge.grad)?;
        current = current.with_block_params(block, &params)?;
        for (s, p) in sum.iter_mut().zip(&params) {
            *s += p;
        }
        if iterations % cfg.block_window == 0 {
            let mean: Vec<f64> = sum.iter().map(|s| s / cfg.block_window as f64).collect();
            sum.iter_mut().for_each(|s| *s = 0.0);
            let done = prev_mean.as_ref().is_some_and(|p| {
                p.iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    < cfg.param_tol
            });
            prev_mean = Some(mean.clone());
            last_mean = Some(mean);
            if done {
                outcome = StageOutcome::Converged;
                break;
            }
        }
    }
    if let Some(mean) = last_mean {
        current = current.with_block_params(block, &mean)?;
    }
    Ok((current, iterations, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RegressionTarget;
    use crate::numerics::{Mat, Vector};

    fn diagonal_target() -> RegressionTarget {
        let x = Mat::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        RegressionTarget::new(x, Vector::from_vec(vec![1.0, 2.0, 1.4, 1.6]), 1.0).unwrap()
    }

    #[test]
    fn mean_field_stage_recovers_diagonal_posterior() {
        let t = diagonal_target();
        let post = t.conjugate_posterior();
        let r = fit_mean_field(&t, &StepwiseConfig::new(1)).unwrap();
        assert_eq!(r.outcome, StageOutcome::Converged);
        for j in 0..2 {
            assert!((r.family.marginals()[j].mu - post.mean()[j]).abs() < 0.05);
            assert!((r.family.marginals()[j].sigma() - post.stds()[j]).abs() < 0.05);
        }
    }

    #[test]
    fn inactive_blocks_are_untouched() {
        let t = diagonal_target();
        let q = DVineFamily::new(
            vec![Marginal::new(0.2, 0.9), Marginal::new(0.4, 0.7)],
            vec![vec![PairCopula::gaussian(0.3).unwrap()]],
        )
        .unwrap();
        let mut opt = OptimizerState::adam(0.01, 1);
        let mut rng = Rng::new(2);
        let r = fit_stage(
            &q,
            &t,
            &VrIwaeConfig::default(),
            ParamBlock::Tree(1),
            &mut opt,
            MonitorConfig::default(),
            200,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.family.marginals(), q.marginals());
        assert_ne!(r.family.trees(), q.trees());
    }

    #[test]
    fn zero_learning_rate_runs_to_the_cap() {
        let t = diagonal_target();
        let q = DVineFamily::mean_field(2);
        let mut opt = OptimizerState::adam(0.0, 4);
        let mut rng = Rng::new(3);
        let mon = MonitorConfig {
            window: 10,
            check_every: 2,
            threshold: 1.1,
        };
        let r = fit_stage(
            &q,
            &t,
            &VrIwaeConfig::default(),
            ParamBlock::Marginals,
            &mut opt,
            mon,
            100,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.outcome, StageOutcome::MaxItersExceeded);
        assert_eq!(r.iterations, 100);
        assert_eq!(r.family, q);
    }

    #[test]
    fn criterion_uses_eta_or_kendall() {
        let rule = StopRule::default();
        let small = [
            PairCopula::gaussian(0.05).unwrap(),
            PairCopula::gaussian(-0.09).unwrap(),
        ];
        assert!(global_criterion(&small, &rule));
        let big = [
            PairCopula::gaussian(0.05).unwrap(),
            PairCopula::gaussian(-0.11).unwrap(),
        ];
        assert!(!global_criterion(&big, &rule));
        let mixed = [
            PairCopula::gaussian(0.05).unwrap(),
            PairCopula::clayton(0.5).unwrap(),
        ];
        assert!(!global_criterion(&mixed, &rule));
        let weak = [
            PairCopula::gaussian(0.05).unwrap(),
            PairCopula::clayton(0.05).unwrap(),
        ];
        assert!(global_criterion(&weak, &rule));
        assert!((rule.kendall_cutoff - 0.0637686).abs() < 1e-6);
    }

    #[test]
    fn gcvi_with_zero_rounds_returns_initialization() {
        let t = diagonal_target();
        let cfg = GcviConfig {
            rounds: 0,
            ..GcviConfig::new(1)
        };
        let r = gcvi_fit(&t, &cfg).unwrap();
        assert_eq!(r.family.truncation(), 1);
        assert_eq!(
            r.family.block_params(ParamBlock::AllTrees).unwrap(),
            vec![0.0]
        );
        assert_eq!(r.family.marginals(), &[Marginal::default(); 2]);
        assert!(r.blocks.is_empty());
    }

    #[test]
    fn stepwise_is_deterministic() {
        let t = diagonal_target();
        let mut cfg = StepwiseConfig::new(5);
        cfg.max_iters = 3000;
        let a = stepwise_fit(&t, &cfg, None).unwrap();
        let b = stepwise_fit(&t, &cfg, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
