//! Truncated D-vine distributions over ℝ^d with Gaussian marginals.
//!
//! Variable order is the natural order `0..d`. Tree `t` (1-based) holds
//! `d - t` pair copulas; edge `j` couples `z_j` and `z_{j+t}` given
//! `z_{j+1..j+t-1}`. Trees above the truncation level are independence.
//!
//! All density and sampling code is generic over [`Scalar`] through
//! [`Lifted`], so the tape-based reparameterized sampler shares its
//! forward arithmetic with the plain `f64` paths.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};
use crate::copulas::{self, CopulaFamily, PairCopula};
use crate::numerics::{dense, partial_correlation, Mat, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mu: f64,
    /// Unconstrained scale, `σ = exp(log_sigma)`.
    pub log_sigma: f64,
}

impl Marginal {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self {
            mu,
            log_sigma: sigma.ln(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }
}

impl Default for Marginal {
    fn default() -> Self {
        Self {
            mu: 0.0,
            log_sigma: 0.0,
        }
    }
}

/// A group of parameters optimized together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    /// `[μ_0..μ_{d-1}, log σ_0..log σ_{d-1}]`
    Marginals,
    /// Raw copula parameters of tree `t` (1-based).
    Tree(usize),
    /// Raw parameters of every materialized tree, tree by tree.
    AllTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyDocument", into = "FamilyDocument")]
pub struct DVineFamily {
    marginals: Vec<Marginal>,
    trees: Vec<Vec<PairCopula>>,
}

impl DVineFamily {
    pub fn new(marginals: Vec<Marginal>, trees: Vec<Vec<PairCopula>>) -> Result<Self> {
        let d = marginals.len();
        if d == 0 {
            return Err(Error::invalid("D-vine needs at least one dimension"));
        }
        if trees.len() > d.saturating_sub(1) {
            return Err(Error::invalid(format!(
                "truncation level {} exceeds d - 1 = {}",
                trees.len(),
                d - 1
            )));
        }
        for (i, tree) in trees.iter().enumerate() {
            if tree.len() != d - (i + 1) {
                return Err(Error::DimensionMismatch {
                    expected: d - (i + 1),
                    actual: tree.len(),
                });
            }
        }
        if marginals
            .iter()
            .any(|m| !m.mu.is_finite() || !m.log_sigma.is_finite())
            || trees.iter().flatten().any(|c| !c.raw.is_finite())
        {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self { marginals, trees })
    }

    /// Standard-normal mean-field family (`μ = 0`, `σ = 1`, no trees).
    pub fn mean_field(d: usize) -> Self {
        Self {
            marginals: vec![Marginal::default(); d],
            trees: Vec::new(),
        }
    }

    /// Gaussian D-vine reproducing `N(mean, cov)` up to truncation `tau`:
    /// tree parameters are the matching partial correlations.
    pub fn from_gaussian(mean: &Vector, cov: &Mat, tau: usize) -> Result<Self> {
        let d = mean.len();
        let (r, stds) = crate::numerics::correlation_from_covariance(cov)?;
        if r.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.nrows(),
            });
        }
        let marginals = (0..d).map(|j| Marginal::new(mean[j], stds[j])).collect();
        let mut trees = Vec::new();
        for t in 1..=tau.min(d.saturating_sub(1)) {
            let mut tree = Vec::with_capacity(d - t);
            for j in 0..d - t {
                let cond: Vec<usize> = (j + 1..j + t).collect();
                let rho = partial_correlation(&r, j, j + t, &cond)?;
                tree.push(PairCopula::gaussian(rho)?);
            }
            trees.push(tree);
        }
        Self::new(marginals, trees)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Number of materialized trees (0 = mean field).
    pub fn truncation(&self) -> usize {
        self.trees.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn trees(&self) -> &[Vec<PairCopula>] {
        &self.trees
    }

    /// Pair copulas of tree `t` (1-based).
    pub fn tree(&self, t: usize) -> Option<&[PairCopula]> {
        t.checked_sub(1)
            .and_then(|i| self.trees.get(i))
            .map(|v| v.as_slice())
    }

    pub fn means(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.marginals.iter().map(|m| m.mu))
    }

    pub fn stds(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.marginals.iter().map(|m| m.sigma()))
    }

    pub fn with_marginals(&self, marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: marginals.len(),
            });
        }
        Self::new(marginals, self.trees.clone())
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "log_density: wrong dimension");
        self.lift_const().log_density(z)
    }

    /// Inverse Rosenblatt transform of `eps ∈ (0,1)^d` followed by the
    /// Gaussian marginal quantiles.
    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim(), "sample: wrong dimension");
        self.lift_const().sample(eps)
    }

    /// Forward Rosenblatt transform `z ↦ (F(z_k | z_0..z_{k-1}))_k`.
    pub fn rosenblatt(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim(), "rosenblatt: wrong dimension");
        self.lift_const().rosenblatt(z)
    }

    /// Registers the `active` block as tape leaves (every other parameter
    /// enters as a constant) and draws `z = g(eps, φ)` on the tape.
    pub fn reparam_sample<'t>(
        &self,
        eps: &[f64],
        tape: &'t Tape,
        active: ParamBlock,
    ) -> Result<ReparamSample<'t>> {
        if eps.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: eps.len(),
            });
        }
        let (lifted, leaves) = self.lift_on(tape, active)?;
        let eps: Vec<Var<'t>> = eps.iter().map(|&e| tape.constant(e)).collect();
        let z = lifted.sample(&eps);
        Ok(ReparamSample { z, leaves, lifted })
    }

    /// Correlation matrix of an all-Gaussian vine (independence edges count
    /// as zero partial correlation).
    pub fn implied_correlation(&self) -> Result<Mat> {
        let d = self.dim();
        let mut etas = Vec::with_capacity(self.trees.len());
        for (t, tree) in self.trees.iter().enumerate() {
            let mut row = Vec::with_capacity(tree.len());
            for (j, c) in tree.iter().enumerate() {
                match c.family {
                    CopulaFamily::Gaussian | CopulaFamily::Independence => row.push(c.natural()),
                    CopulaFamily::Clayton => {
                        return Err(Error::NonGaussianCopula {
                            tree: t + 1,
                            edge: j,
                        })
                    }
                }
            }
            etas.push(row);
        }
        let r = implied_correlation_from(d, &etas, 0.0)?;
        Ok(Mat::from_row_slice(d, d, &r))
    }

    /// Covariance `D R D` of an all-Gaussian vine.
    pub fn implied_covariance(&self) -> Result<Mat> {
        let r = self.implied_correlation()?;
        Ok(crate::numerics::covariance_from_correlation(
            &r,
            &self.stds(),
        ))
    }

    /// Appends tree `truncation() + 1`.
    pub fn extend(&self, new_tree: Vec<PairCopula>) -> Result<Self> {
        let d = self.dim();
        let t = self.truncation() + 1;
        if t > d.saturating_sub(1) {
            return Err(Error::invalid(format!(
                "cannot add tree {t} to a {d}-dimensional vine"
            )));
        }
        if new_tree.len() != d - t {
            return Err(Error::DimensionMismatch {
                expected: d - t,
                actual: new_tree.len(),
            });
        }
        let mut trees = self.trees.clone();
        trees.push(new_tree);
        Self::new(self.marginals.clone(), trees)
    }

    /// Keeps trees `1..=tau`.
    pub fn truncate(&self, tau: usize) -> Result<Self> {
        if tau > self.truncation() {
            return Err(Error::invalid(format!(
                "cannot truncate level {} to higher level {tau}",
                self.truncation()
            )));
        }
        Ok(Self {
            marginals: self.marginals.clone(),
            trees: self.trees[..tau].to_vec(),
        })
    }

    pub fn block_len(&self, block: ParamBlock) -> usize {
        match block {
            ParamBlock::Marginals => 2 * self.dim(),
            ParamBlock::Tree(t) => self.tree(t).map_or(0, |c| c.len()),
            ParamBlock::AllTrees => self.trees.iter().map(|t| t.len()).sum(),
        }
    }

    fn check_block(&self, block: ParamBlock) -> Result<()> {
        if let ParamBlock::Tree(t) = block {
            if self.tree(t).is_none() {
                return Err(Error::invalid(format!(
                    "tree {t} is not materialized (truncation {})",
                    self.truncation()
                )));
            }
        }
        Ok(())
    }

    /// Raw parameters of `block`, in the layout documented on [`ParamBlock`].
    pub fn block_params(&self, block: ParamBlock) -> Result<Vec<f64>> {
        self.check_block(block)?;
        Ok(match block {
            ParamBlock::Marginals => self
                .marginals
                .iter()
                .map(|m| m.mu)
                .chain(self.marginals.iter().map(|m| m.log_sigma))
                .collect(),
            ParamBlock::Tree(t) => self.trees[t - 1].iter().map(|c| c.raw).collect(),
            ParamBlock::AllTrees => self.trees.iter().flatten().map(|c| c.raw).collect(),
        })
    }

    /// Copy with `block` replaced by `values`; all other parameters untouched.
    pub fn with_block_params(&self, block: ParamBlock, values: &[f64]) -> Result<Self> {
        self.check_block(block)?;
        let expected = self.block_len(block);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        let mut out = self.clone();
        match block {
            ParamBlock::Marginals => {
                let d = self.dim();
                for (j, m) in out.marginals.iter_mut().enumerate() {
                    m.mu = values[j];
                    m.log_sigma = values[d + j];
                }
            }
            ParamBlock::Tree(t) => {
                for (c, &v) in out.trees[t - 1].iter_mut().zip(values) {
                    *c = PairCopula::from_raw(c.family, v);
                }
            }
            ParamBlock::AllTrees => {
                for (c, &v) in out.trees.iter_mut().flatten().zip(values) {
                    *c = PairCopula::from_raw(c.family, v);
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter update"));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn lift_const(&self) -> Lifted<f64> {
        Lifted {
            mu: self.marginals.iter().map(|m| m.mu).collect(),
            log_sigma: self.marginals.iter().map(|m| m.log_sigma).collect(),
            sigma: self.marginals.iter().map(|m| m.sigma()).collect(),
            families: self
                .trees
                .iter()
                .map(|t| t.iter().map(|c| c.family).collect())
                .collect(),
            raws: self
                .trees
                .iter()
                .map(|t| t.iter().map(|c| c.raw).collect())
                .collect(),
        }
    }

    fn lift_on<'t>(
        &self,
        tape: &'t Tape,
        active: ParamBlock,
    ) -> Result<(Lifted<Var<'t>>, Vec<Var<'t>>)> {
        self.check_block(active)?;
        let mut leaves = Vec::new();
        let (mu, log_sigma): (Vec<Var>, Vec<Var>) = if active == ParamBlock::Marginals {
            let mu: Vec<Var> = self.marginals.iter().map(|m| tape.var(m.mu)).collect();
            let ls: Vec<Var> = self
                .marginals
                .iter()
                .map(|m| tape.var(m.log_sigma))
                .collect();
            leaves.extend(&mu);
            leaves.extend(&ls);
            (mu, ls)
        } else {
            (
                self.marginals.iter().map(|m| tape.constant(m.mu)).collect(),
                self.marginals
                    .iter()
                    .map(|m| tape.constant(m.log_sigma))
                    .collect(),
            )
        };
        let sigma = if active == ParamBlock::Marginals {
            log_sigma.iter().map(|ls| ls.exp()).collect()
        } else {
            self.marginals
                .iter()
                .map(|m| tape.constant(m.sigma()))
                .collect()
        };
        let mut raws = Vec::with_capacity(self.trees.len());
        for (i, tree) in self.trees.iter().enumerate() {
            let is_active = match active {
                ParamBlock::Tree(t) => t == i + 1,
                ParamBlock::AllTrees => true,
                ParamBlock::Marginals => false,
            };
            let row: Vec<Var> = tree
                .iter()
                .map(|c| {
                    if is_active {
                        tape.var(c.raw)
                    } else {
                        tape.constant(c.raw)
                    }
                })
                .collect();
            if is_active {
                leaves.extend(&row);
            }
            raws.push(row);
        }
        let families = self
            .trees
            .iter()
            .map(|t| t.iter().map(|c| c.family).collect())
            .collect();
        Ok((
            Lifted {
                mu,
                log_sigma,
                sigma,
                families,
                raws,
            },
            leaves,
        ))
    }
}

/// Output of [`DVineFamily::reparam_sample`].
pub struct ReparamSample<'t> {
    pub z: Vec<Var<'t>>,
    /// Leaves of the active block, in [`DVineFamily::block_params`] order.
    pub leaves: Vec<Var<'t>>,
    /// The lifted family, for evaluating `log q` on the same tape.
    pub lifted: Lifted<Var<'t>>,
}

/// Vine parameters lifted into a [`Scalar`] context.
#[derive(Debug, Clone)]
pub struct Lifted<S> {
    mu: Vec<S>,
    log_sigma: Vec<S>,
    sigma: Vec<S>,
    families: Vec<Vec<CopulaFamily>>,
    raws: Vec<Vec<S>>,
}

impl<S: Scalar> Lifted<S> {
    fn d(&self) -> usize {
        self.mu.len()
    }

    fn tau(&self) -> usize {
        self.raws.len()
    }

    fn h(&self, t: usize, j: usize, u: S, v: S) -> S {
        copulas::h_function(self.families[t - 1][j], self.raws[t - 1][j], u, v)
    }

    fn h_inv(&self, t: usize, j: usize, w: S, v: S) -> S {
        copulas::h_inverse(self.families[t - 1][j], self.raws[t - 1][j], w, v)
    }

    /// Copula data `(a, b)` per tree: `a[t][j] = F(z_j | z_{j+1..j+t-1})`,
    /// `b[t][j] = F(z_{j+t} | z_{j+1..j+t-1})`, `t = 1..=tau`.
    fn copula_data(&self, u: &[S]) -> (Vec<Vec<S>>, Vec<Vec<S>>) {
        let d = self.d();
        let tau = self.tau();
        let mut a: Vec<Vec<S>> = vec![Vec::new()];
        let mut b: Vec<Vec<S>> = vec![Vec::new()];
        if tau == 0 {
            return (a, b);
        }
        a.push(u[..d - 1].to_vec());
        b.push(u[1..].to_vec());
        for t in 1..tau {
            let n = d - t - 1;
            let mut next_a = Vec::with_capacity(n);
            let mut next_b = Vec::with_capacity(n);
            for j in 0..n {
                next_a.push(self.h(t, j, a[t][j], b[t][j]));
                next_b.push(self.h(t, j + 1, b[t][j + 1], a[t][j + 1]));
            }
            a.push(next_a);
            b.push(next_b);
        }
        (a, b)
    }

    fn marginal_cdf(&self, z: &[S]) -> (Vec<S>, S) {
        let mut log_marg = None;
        let mut u = Vec::with_capacity(z.len());
        for j in 0..self.d() {
            let x = (z[j] - self.mu[j]) / self.sigma[j];
            let term = x.normal_logpdf() - self.log_sigma[j];
            log_marg = Some(match log_marg {
                None => term,
                Some(acc) => acc + term,
            });
            u.push(x.normal_cdf());
        }
        (u, log_marg.expect("dimension >= 1"))
    }

    pub fn log_density(&self, z: &[S]) -> S {
        let (u, mut acc) = self.marginal_cdf(z);
        let (a, b) = self.copula_data(&u);
        for t in 1..=self.tau() {
            for j in 0..self.d() - t {
                let fam = self.families[t - 1][j];
                if fam != CopulaFamily::Independence {
                    acc = acc + copulas::log_density(fam, self.raws[t - 1][j], a[t][j], b[t][j]);
                }
            }
        }
        acc
    }

    pub fn rosenblatt(&self, z: &[S]) -> Vec<S> {
        let (u, _) = self.marginal_cdf(z);
        let (a, b) = self.copula_data(&u);
        (0..self.d())
            .map(|k| {
                let m = k.min(self.tau());
                if m == 0 {
                    u[k]
                } else {
                    self.h(m, k - m, b[m][k - m], a[m][k - m])
                }
            })
            .collect()
    }

    pub fn sample(&self, eps: &[S]) -> Vec<S> {
        let d = self.d();
        let tau = self.tau();
        let mut a: Vec<Vec<Option<S>>> = (0..=tau).map(|_| vec![None; d]).collect();
        let mut b: Vec<Vec<Option<S>>> = (0..=tau).map(|_| vec![None; d]).collect();
        let mut z = Vec::with_capacity(d);
        for k in 0..d {
            let m = k.min(tau);
            let mut v = eps[k];
            for t in (1..=m).rev() {
                let j = k - t;
                v = self.h_inv(t, j, v, a[t][j].expect("conditioning value computed"));
                b[t][j] = Some(v);
            }
            if tau >= 1 && k < d - 1 {
                a[1][k] = Some(v);
            }
            for t in 1..=m {
                let j = k - t;
                if t < tau && j + t + 1 < d {
                    let (aj, bj) = (a[t][j].unwrap(), b[t][j].unwrap());
                    a[t + 1][j] = Some(self.h(t, j, aj, bj));
                }
            }
            z.push(self.mu[k] + self.sigma[k] * crate::copulas::clamp_unit(v).normal_quantile());
        }
        z
    }
}

/// Row-major correlation matrix from per-tree partial correlations
/// (`etas[t-1][j]` couples `j` and `j+t`); missing trees mean zero partials.
/// `proto` only supplies the scalar context for constants.
pub fn implied_correlation_from<S: Scalar>(d: usize, etas: &[Vec<S>], proto: S) -> Result<Vec<S>> {
    let zero = proto.constant(0.0);
    let mut r = vec![zero; d * d];
    for i in 0..d {
        r[i * d + i] = proto.constant(1.0);
    }
    let dot = |x: &[S], y: &[S]| {
        let mut acc = x[0] * y[0];
        for i in 1..x.len() {
            acc = acc + x[i] * y[i];
        }
        acc
    };
    for t in 1..d {
        for j in 0..d - t {
            let rho = etas.get(t - 1).map(|row| row[j]);
            let k = j + t;
            let value = if t == 1 {
                rho.unwrap_or(zero)
            } else {
                let cond: Vec<usize> = (j + 1..k).collect();
                let m = cond.len();
                let block: Vec<S> = cond
                    .iter()
                    .flat_map(|&p| cond.iter().map(move |&q| (p, q)))
                    .map(|(p, q)| r[p * d + q])
                    .collect();
                let l = dense::cholesky(&block, m)?;
                let r1: Vec<S> = cond.iter().map(|&p| r[j * d + p]).collect();
                let r2: Vec<S> = cond.iter().map(|&p| r[k * d + p]).collect();
                let x2 = dense::cholesky_solve(&l, m, &r2);
                let c = dot(&r1, &x2);
                match rho {
                    None => c,
                    Some(rho) => {
                        let x1 = dense::cholesky_solve(&l, m, &r1);
                        let a1 = dot(&r1, &x1);
                        let a2 = dot(&r2, &x2);
                        c + rho * ((-a1 + 1.0) * (-a2 + 1.0)).sqrt()
                    }
                }
            };
            r[j * d + k] = value;
            r[k * d + j] = value;
        }
    }
    Ok(r)
}

/// On-disk representation: natural-scale parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDocument {
    pub dimension: usize,
    pub truncation: usize,
    pub marginals: Vec<MarginalDocument>,
    pub trees: Vec<Vec<CopulaDocument>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalDocument {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaDocument {
    pub family: CopulaFamily,
    #[serde(default)]
    pub parameter: f64,
}

impl From<DVineFamily> for FamilyDocument {
    fn from(q: DVineFamily) -> Self {
        FamilyDocument {
            dimension: q.dim(),
            truncation: q.truncation(),
            marginals: q
                .marginals
                .iter()
                .map(|m| MarginalDocument {
                    mu: m.mu,
                    sigma: m.sigma(),
                })
                .collect(),
            trees: q
                .trees
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|c| CopulaDocument {
                            family: c.family,
                            parameter: c.natural(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<FamilyDocument> for DVineFamily {
    type Error = Error;

    fn try_from(doc: FamilyDocument) -> Result<Self> {
        if doc.marginals.len() != doc.dimension {
            return Err(Error::DimensionMismatch {
                expected: doc.dimension,
                actual: doc.marginals.len(),
            });
        }
        if doc.trees.len() != doc.truncation {
            return Err(Error::DimensionMismatch {
                expected: doc.truncation,
                actual: doc.trees.len(),
            });
        }
        let mut marginals = Vec::with_capacity(doc.dimension);
        for m in &doc.marginals {
            if !(m.sigma > 0.0) || !m.sigma.is_finite() || !m.mu.is_finite() {
                return Err(Error::invalid(format!(
                    "invalid marginal (mu {}, sigma {})",
                    m.mu, m.sigma
                )));
            }
            marginals.push(Marginal::new(m.mu, m.sigma));
        }
        let trees = doc
            .trees
            .iter()
            .map(|t| {
                t.iter()
                    .map(|c| PairCopula::from_natural(c.family, c.parameter))
                    .collect()
            })
            .collect::<Result<Vec<Vec<_>>>>()?;
        DVineFamily::new(marginals, trees)
    }
}
