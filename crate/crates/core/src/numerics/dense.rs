//! Row-major dense kernels generic over [`Scalar`], so the same Cholesky and
//! triangular solves serve both plain `f64` code and objectives recorded on
//! an autodiff tape.

use crate::autodiff::Scalar;
use crate::{Error, Result};

/// Lower Cholesky factor of the `n × n` row-major SPD matrix `a`.
pub fn cholesky<S: Scalar>(a: &[S], n: usize) -> Result<Vec<S>> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            actual: a.len(),
        });
    }
    let mut l: Vec<S> = a.iter().map(|x| x.constant(0.0)).collect();
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag = diag - l[j * n + k].square();
        }
        let pivot = diag.value();
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotSpd {
                pivot: j,
                value: pivot,
            });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// log |A| from its Cholesky factor.
pub fn logdet_from_cholesky<S: Scalar>(l: &[S], n: usize) -> S {
    let mut acc = l[0].ln();
    for i in 1..n {
        acc = acc + l[i * n + i].ln();
    }
    acc * 2.0
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve<S: Scalar>(l: &[S], n: usize, b: &[S]) -> Vec<S> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Inverse of an SPD matrix from its Cholesky factor, row-major.
pub fn cholesky_inverse<S: Scalar>(l: &[S], n: usize) -> Vec<S> {
    let zero = l[0].constant(0.0);
    let mut inv = vec![zero; n * n];
    for j in 0..n {
        let mut e = vec![zero; n];
        e[j] = l[0].constant(1.0);
        let col = cholesky_solve(l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

/// `xᵀ A⁻¹ x` from the Cholesky factor of `A`.
pub fn inverse_quadratic_form<S: Scalar>(l: &[S], n: usize, x: &[S]) -> S {
    // ‖L⁻¹x‖²
    let mut y = x.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut acc = y[0].square();
    for v in &y[1..] {
        acc = acc + v.square();
    }
    acc
}

/// Row-major product of two `n × n` matrices.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut s = a[i * n] * b[j];
            for k in 1..n {
                s = s + a[i * n + k] * b[k * n + j];
            }
            out.push(s);
        }
    }
    out
}

pub fn trace<S: Scalar>(a: &[S], n: usize) -> S {
    let mut acc = a[0];
    for i in 1..n {
        acc = acc + a[i * n + i];
    }
    acc
}
