use serde::{Deserialize, Serialize};

use super::divergences::{
    backward_kl, forward_kl, renyi_fixed_point_residual, renyi_q_p, FixedGaussian,
};
use super::minimize::{minimize, Objective};
use crate::autodiff::{Scalar, Tape};
use crate::dvine::implied_correlation_from;
use crate::models::GaussianDist;
use crate::numerics::{partial_correlation, Mat, Vector};
use crate::{Error, Result};

const GTOL: f64 = 1e-10;
const MAX_NEWTON: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p ‖ q)`
    ForwardKL,
    /// `KL(q ‖ p)`
    BackwardKL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepwiseObjective {
    pub direction: KlDirection,
    /// Skip the marginal stage's scale fit and use the target's stds.
    pub fix_stds_to_truth: bool,
}

impl StepwiseObjective {
    pub fn new(direction: KlDirection) -> Self {
        Self {
            direction,
            fix_stds_to_truth: false,
        }
    }

    pub fn with_fixed_stds(direction: KlDirection) -> Self {
        Self {
            direction,
            fix_stds_to_truth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactFit {
    pub nu: Vector,
    pub stds: Vector,
    /// `partials[t-1][j]`: tree-`t` partial correlation of pair `(j, j+t)`.
    pub partials: Vec<Vec<f64>>,
    pub correlation: Mat,
    /// Objective value after each stage.
    pub stage_values: Vec<f64>,
}

impl ExactFit {
    pub fn distribution(&self) -> Result<GaussianDist> {
        GaussianDist::from_correlation(self.nu.clone(), &self.correlation, &self.stds)
    }
}

fn divergence<S: Scalar>(dir: KlDirection, p: &FixedGaussian, nu: &[S], psi: &[S]) -> Result<S> {
    match dir {
        KlDirection::ForwardKL => forward_kl(p, nu, psi),
        KlDirection::BackwardKL => backward_kl(p, nu, psi),
    }
}

fn covariance<S: Scalar>(stds: &[S], corr: &[S]) -> Vec<S> {
    let d = stds.len();
    (0..d * d)
        .map(|k| corr[k] * stds[k / d] * stds[k % d])
        .collect()
}

/// Independence stage over `(ν, log s)`, or `ν` alone with fixed stds.
struct MarginalStage<'a> {
    p: &'a FixedGaussian,
    dir: KlDirection,
    fixed_stds: Option<Vec<f64>>,
}

impl Objective for MarginalStage<'_> {
    fn dim(&self) -> usize {
        if self.fixed_stds.is_some() {
            self.p.d
        } else {
            2 * self.p.d
        }
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let d = self.p.d;
        let proto = x[0];
        let stds: Vec<S> = match &self.fixed_stds {
            Some(s) => s.iter().map(|&v| proto.constant(v)).collect(),
            None => x[d..].iter().map(|v| v.exp()).collect(),
        };
        let zero = proto.constant(0.0);
        let mut psi = vec![zero; d * d];
        for i in 0..d {
            psi[i * d + i] = stds[i].square();
        }
        divergence(self.dir, self.p, &x[..d], &psi)
    }
}

/// One tree stage: raw `atanh η` of tree `t`, earlier trees fixed,
/// later trees at independence.
struct TreeStage<'a> {
    p: &'a FixedGaussian,
    dir: KlDirection,
    nu: &'a [f64],
    stds: &'a [f64],
    earlier: &'a [Vec<f64>],
    tree: usize,
}

impl Objective for TreeStage<'_> {
    fn dim(&self) -> usize {
        self.p.d - self.tree
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let proto = x[0];
        let d = self.p.d;
        let mut etas: Vec<Vec<S>> = self
            .earlier
            .iter()
            .map(|row| row.iter().map(|&v| proto.constant(v)).collect())
            .collect();
        etas.push(x.iter().map(|v| v.tanh()).collect());
        let corr = implied_correlation_from(d, &etas, proto)?;
        let stds: Vec<S> = self.stds.iter().map(|&v| proto.constant(v)).collect();
        let nu: Vec<S> = self.nu.iter().map(|&v| proto.constant(v)).collect();
        divergence(self.dir, self.p, &nu, &covariance(&stds, &corr))
    }
}

fn check_tau(d: usize, tau: usize) -> Result<()> {
    if tau + 1 > d.max(1) {
        return Err(Error::invalid(format!(
            "truncation {tau} exceeds d - 1 = {}",
            d.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Runs the stepwise scheme with exact Gaussian objectives: marginals under
/// independence first, then one tree at a time with everything before it
/// frozen. Each stage is a damped Newton solve to gradient tolerance 1e-10.
pub fn stepwise_exact_fit(
    obj: StepwiseObjective,
    target: &GaussianDist,
    tau: usize,
) -> Result<ExactFit> {
    let d = target.dim();
    check_tau(d, tau)?;
    let p = FixedGaussian::new(target);
    let mut stage_values = Vec::with_capacity(tau + 1);

    let fixed_stds = obj
        .fix_stds_to_truth
        .then(|| target.stds().as_slice().to_vec());
    let marginal = MarginalStage {
        p: &p,
        dir: obj.direction,
        fixed_stds: fixed_stds.clone(),
    };
    // start away from the answer so the solve actually has work to do
    let x0 = vec![0.0; marginal.dim()];
    let m0 = minimize(&marginal, &x0, GTOL, MAX_NEWTON)?;
    stage_values.push(m0.value);
    let nu = m0.x[..d].to_vec();
    let stds = match fixed_stds {
        Some(s) => s,
        None => m0.x[d..].iter().map(|v| v.exp()).collect(),
    };

    let mut partials: Vec<Vec<f64>> = Vec::with_capacity(tau);
    for t in 1..=tau {
        let stage = TreeStage {
            p: &p,
            dir: obj.direction,
            nu: &nu,
            stds: &stds,
            earlier: &partials,
            tree: t,
        };
        let m = minimize(&stage, &vec![0.0; d - t], GTOL, MAX_NEWTON)?;
        stage_values.push(m.value);
        partials.push(m.x.iter().map(|v| v.tanh()).collect());
    }

    let corr = implied_correlation_from(d, &partials, 0.0)?;
    Ok(ExactFit {
        nu: Vector::from_vec(nu),
        stds: Vector::from_vec(stds),
        partials,
        correlation: Mat::from_row_slice(d, d, &corr),
        stage_values,
    })
}

/// D-vine partial correlations of a correlation matrix: pair `(j, j+t)`
/// given the variables strictly between them.
pub fn dvine_partials(r: &Mat, tau: usize) -> Result<Vec<Vec<f64>>> {
    let d = r.nrows();
    check_tau(d, tau)?;
    (1..=tau)
        .map(|t| {
            (0..d - t)
                .map(|j| partial_correlation(r, j, j + t, &(j + 1..j + t).collect::<Vec<_>>()))
                .collect()
        })
        .collect()
}

/// Forward-KL gradient of every tree stage with respect to its own raw
/// parameters, evaluated at the target's own moments and partials. All
/// entries vanish when the stepwise optimum is the truth.
pub fn tree_stage_gradient(target: &GaussianDist) -> Result<Vec<Vec<f64>>> {
    let d = target.dim();
    let p = FixedGaussian::new(target);
    let tau = d.saturating_sub(1);
    let partials = dvine_partials(target.correlation(), tau)?;
    let nu = target.mean().as_slice().to_vec();
    let stds = target.stds().as_slice().to_vec();
    let mut out = Vec::with_capacity(tau);
    for t in 1..=tau {
        let stage = TreeStage {
            p: &p,
            dir: KlDirection::ForwardKL,
            nu: &nu,
            stds: &stds,
            earlier: &partials[..t - 1],
            tree: t,
        };
        let tape = Tape::new();
        let vars: Vec<_> = partials[t - 1]
            .iter()
            .map(|&e: &f64| tape.var(e.atanh()))
            .collect();
        let value = stage.eval(&vars)?;
        out.push(tape.gradient(value, &vars)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalRenyiFit {
    pub alpha: f64,
    pub nu: Vector,
    pub variances: Vector,
    pub value: f64,
    /// Largest |diag(Ψ) − diag(Φ_α⁻¹)| at the minimizer.
    pub fixed_point_residual: f64,
}

struct DiagonalRenyi<'a> {
    p: &'a FixedGaussian,
    alpha: f64,
}

impl Objective for DiagonalRenyi<'_> {
    fn dim(&self) -> usize {
        2 * self.p.d
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let d = self.p.d;
        let zero = x[0].constant(0.0);
        let mut psi = vec![zero; d * d];
        for i in 0..d {
            psi[i * d + i] = (x[d + i] * 2.0).exp();
        }
        renyi_q_p(self.p, &x[..d], &psi, self.alpha)
    }
}

/// Minimizes `R_α(q ‖ p)` over diagonal Gaussians `q`.
pub fn minimize_renyi_diagonal(target: &GaussianDist, alpha: f64) -> Result<DiagonalRenyiFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "Rényi order must lie in (0, 1), got {alpha}"
        )));
    }
    let d = target.dim();
    let p = FixedGaussian::new(target);
    let obj = DiagonalRenyi { p: &p, alpha };
    let m = minimize(&obj, &vec![0.0; 2 * d], GTOL, MAX_NEWTON)?;
    let variances = Vector::from_iterator(d, m.x[d..].iter().map(|v| (2.0 * v).exp()));
    let residual = renyi_fixed_point_residual(&variances, target.cov(), alpha)?;
    Ok(DiagonalRenyiFit {
        alpha,
        nu: Vector::from_vec(m.x[..d].to_vec()),
        variances,
        value: m.value,
        fixed_point_residual: residual.amax(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NEEDLE_CORRELATION;
    use crate::numerics::sample_wishart;
    use crate::Rng;

    fn wishart_target(d: usize, seed: u64) -> GaussianDist {
        let mut rng = Rng::new(seed);
        let cov = sample_wishart(
            d as f64 + 4.0,
            &(Mat::identity(d, d) / (d as f64 + 4.0)),
            &mut rng,
        )
        .unwrap();
        GaussianDist::new(rng.standard_normal_vec(d), cov).unwrap()
    }

    fn needle() -> GaussianDist {
        let r = crate::models::mat_from_rows(&NEEDLE_CORRELATION);
        GaussianDist::from_correlation(
            Vector::from_vec(vec![1.0, -2.0, 0.5, 0.0]),
            &r,
            &Vector::from_vec(vec![0.5, 2.0, 1.0, 1.5]),
        )
        .unwrap()
    }

    #[test]
    fn forward_kl_recovers_truth() {
        for (d, seed) in [(3, 1), (4, 2), (5, 3)] {
            let target = wishart_target(d, seed);
            let fit = stepwise_exact_fit(
                StepwiseObjective::new(KlDirection::ForwardKL),
                &target,
                d - 1,
            )
            .unwrap();
            assert!((&fit.nu - target.mean()).amax() < 1e-6);
            assert!((&fit.stds - target.stds()).amax() < 1e-6);
            assert!((&fit.correlation - target.correlation()).amax() < 1e-6);
        }
    }

    #[test]
    fn forward_partials_equal_target_partials() {
        let target = wishart_target(4, 9);
        let fit =
            stepwise_exact_fit(StepwiseObjective::new(KlDirection::ForwardKL), &target, 3).unwrap();
        let truth = dvine_partials(target.correlation(), 3).unwrap();
        for (a, b) in fit.partials.iter().flatten().zip(truth.iter().flatten()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_kl_misses_correlated_target() {
        let fit = stepwise_exact_fit(
            StepwiseObjective::new(KlDirection::BackwardKL),
            &needle(),
            3,
        )
        .unwrap();
        assert!((&fit.correlation - needle().correlation()).amax() > 0.01);
        // the marginal stage underestimates scale
        assert!(fit
            .stds
            .iter()
            .zip(needle().stds().iter())
            .all(|(a, b)| a < b));
        let fixed = stepwise_exact_fit(
            StepwiseObjective::with_fixed_stds(KlDirection::BackwardKL),
            &needle(),
            3,
        )
        .unwrap();
        assert_eq!(fixed.stds, needle().stds().clone());
        assert!((&fixed.correlation - needle().correlation()).amax() > 0.01);
    }

    #[test]
    fn backward_kl_exact_under_independence() {
        let target = GaussianDist::new(
            Vector::from_vec(vec![1.0, 2.0, 3.0]),
            Mat::from_diagonal(&Vector::from_vec(vec![0.5, 2.0, 4.0])),
        )
        .unwrap();
        let fit = stepwise_exact_fit(StepwiseObjective::new(KlDirection::BackwardKL), &target, 2)
            .unwrap();
        assert!((&fit.correlation - Mat::identity(3, 3)).amax() < 1e-8);
        assert!((&fit.stds - target.stds()).amax() < 1e-8);
    }

    #[test]
    fn stationarity_at_truth() {
        let g = tree_stage_gradient(&wishart_target(5, 4)).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn renyi_diagonal_fixed_point() {
        let target = needle();
        for alpha in [0.1, 0.5, 0.9] {
            let fit = minimize_renyi_diagonal(&target, alpha).unwrap();
            assert!((&fit.nu - target.mean()).amax() < 1e-6);
            assert!(
                fit.fixed_point_residual < 1e-6,
                "{alpha}: {}",
                fit.fixed_point_residual
            );
        }
    }

    #[test]
    fn rejects_bad_tau_and_alpha() {
        let t = wishart_target(3, 0);
        assert!(stepwise_exact_fit(StepwiseObjective::new(KlDirection::ForwardKL), &t, 3).is_err());
        assert!(minimize_renyi_diagonal(&t, 1.0).is_err());
    }
}
