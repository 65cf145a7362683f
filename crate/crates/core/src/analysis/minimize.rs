use crate::autodiff::{Scalar, Tape};
use crate::numerics::dense;
use crate::{Error, Result};

/// A smooth objective written once for plain and tape scalars.
pub trait Objective {
    fn dim(&self) -> usize;

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Largest |gradient component| at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
}

fn value_and_gradient<O: Objective>(obj: &O, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
    let out = obj.eval(&vars)?;
    let g = tape.gradient(out, &vars)?;
    Ok((out.value(), g))
}

/// Finite-difference Hessian of the exact gradient, symmetrized.
fn hessian<O: Objective>(obj: &O, x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut h = vec![0.0; n * n];
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        xp[j] += step;
        let mut xm = x.to_vec();
        xm[j] -= step;
        let (_, gp) = value_and_gradient(obj, &xp)?;
        let (_, gm) = value_and_gradient(obj, &xm)?;
        for i in 0..n {
            h[i * n + j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = s;
            h[j * n + i] = s;
        }
    }
    Ok(h)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton with exact gradients, a finite-difference Hessian and
/// Armijo backtracking. Converges when the largest gradient component
/// drops below `gtol`.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], gtol: f64, max_iters: usize) -> Result<Minimum> {
    let n = obj.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = value_and_gradient(obj, &x)?;
    for it in 0..max_iters {
        if max_abs(&g) < gtol {
            return Ok(Minimum {
                x,
                value: f,
                grad_norm: max_abs(&g),
                iterations: it,
            });
        }
        let h = hessian(obj, &x)?;
        // Levenberg shift until the system is positive definite
        let scale = (0..n).map(|i| h[i * n + i].abs()).fold(1e-12, f64::max);
        let mut lambda = 0.0;
        let l = loop {
            let mut shifted = h.clone();
            for i in 0..n {
                shifted[i * n + i] += lambda;
            }
            match dense::cholesky(&shifted, n) {
                Ok(l) => break l,
                Err(_) => {
                    lambda = if lambda == 0.0 {
                        1e-8 * scale
                    } else {
                        lambda * 10.0
                    }
                }
            }
            if lambda > 1e12 * scale {
                return Err(Error::NoConvergence("Hessian shift diverged".into()));
            }
        };
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let p = dense::cholesky_solve(&l, n, &neg_g);
        let slope: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            if let Ok((ft, gt)) = value_and_gradient(obj, &xt) {
                if ft.is_finite()
                    && (ft <= f + 1e-4 * t * slope
                        || max_abs(&gt) < max_abs(&g) && ft <= f + 1e-12 * f.abs().max(1.0))
                {
                    x = xt;
                    f = ft;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            let gn = max_abs(&g);
            if gn < gtol.sqrt() * 1e-2 {
                // at the rounding floor of the objective
                return Ok(Minimum {
                    x,
                    value: f,
                    grad_norm: gn,
                    iterations: it,
                });
            }
            return Err(Error::NoConvergence(format!(
                "line search failed at |g| = {gn:e}"
            )));
        }
    }
    let gn = max_abs(&g);
    if gn < gtol {
        Ok(Minimum {
            x,
            value: f,
            grad_norm: gn,
            iterations: max_iters,
        })
    } else {
        Err(Error::NoConvergence(format!(
            "{max_iters} Newton steps, |g| = {gn:e}"
        )))
    }
}
