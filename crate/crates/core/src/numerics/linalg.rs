use super::{dense, Mat, Vector};
use crate::{Error, Result};

fn to_row_major(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(a[(i, j)]);
        }
    }
    out
}

fn check_square(a: &Mat) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(a.nrows())
}

/// Lower-triangular `L` with `L Lᵀ = a`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = check_square(a)?;
    let l = dense::cholesky(&to_row_major(a), n)?;
    Ok(Mat::from_row_slice(n, n, &l))
}

/// `(a⁻¹, log |a|)` for SPD `a`.
pub fn spd_inverse_and_logdet(a: &Mat) -> Result<(Mat, f64)> {
    let n = check_square(a)?;
    let l = dense::cholesky(&to_row_major(a), n)?;
    let logdet = dense::logdet_from_cholesky(&l, n);
    let mut inv = Mat::from_row_slice(n, n, &dense::cholesky_inverse(&l, n));
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    Ok((inv, logdet))
}

/// Splits `sigma = D R D` into the correlation matrix `R` and standard deviations.
pub fn correlation_from_covariance(sigma: &Mat) -> Result<(Mat, Vector)> {
    let n = check_square(sigma)?;
    // SPD check
    dense::cholesky(&to_row_major(sigma), n)?;
    let stds = Vector::from_iterator(n, (0..n).map(|i| sigma[(i, i)].sqrt()));
    let mut r = Mat::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                r[(i, j)] = sigma[(i, j)] / (stds[i] * stds[j]);
            }
        }
    }
    Ok((r, stds))
}

pub fn covariance_from_correlation(r: &Mat, stds: &Vector) -> Mat {
    let n = r.nrows();
    Mat::from_fn(n, n, |i, j| r[(i, j)] * stds[i] * stds[j])
}

/// Partial correlation of variables `i` and `j` given `cond`, via the
/// precision matrix of the `{i, j} ∪ cond` block.
pub fn partial_correlation(r: &Mat, i: usize, j: usize, cond: &[usize]) -> Result<f64> {
    let n = check_square(r)?;
    if i == j || i >= n || j >= n {
        return Err(Error::invalid(format!(
            "bad pair ({i}, {j}) for dimension {n}"
        )));
    }
    if cond.iter().any(|&k| k == i || k == j || k >= n) {
        return Err(Error::invalid(
            "conditioning set overlaps the pair or is out of range",
        ));
    }
    if cond.is_empty() {
        return Ok(r[(i, j)]);
    }
    let idx: Vec<usize> = [i, j].iter().chain(cond).copied().collect();
    let m = idx.len();
    let block = Mat::from_fn(m, m, |a, b| r[(idx[a], idx[b])]);
    let (p, _) = spd_inverse_and_logdet(&block)
        .map_err(|e| Error::Singular(format!("conditioning block: {e}")))?;
    Ok(-p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt())
}

/// Symmetric matrix projected to a valid correlation matrix: eigenvalues
/// are clipped at `floor`, then the diagonal is rescaled to one. Valid
/// correlation matrices with smallest eigenvalue at least `floor` are
/// returned unchanged up to rounding.
pub fn nearest_correlation(a: &Mat, floor: f64) -> Result<Mat> {
    let n = check_square(a)?;
    if !(floor > 0.0) {
        return Err(Error::invalid("eigenvalue floor must be positive"));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let b = &eig.eigenvectors * Mat::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut r = Mat::from_fn(n, n, |i, j| b[(i, j)] / (b[(i, i)] * b[(j, j)]).sqrt());
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let s = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = s;
            r[(j, i)] = s;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cholesky() {
        let l = cholesky(&Mat::identity(3, 3)).unwrap();
        assert_eq!(l, Mat::identity(3, 3));
    }

    #[test]
    fn diagonal_inverse_and_logdet() {
        let (inv, ld) =
            spd_inverse_and_logdet(&Mat::from_diagonal(&Vector::from_vec(vec![2.0, 8.0]))).unwrap();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((inv[(1, 1)] - 0.125).abs() < 1e-15);
        assert!((ld - 16f64.ln()).abs() < 1e-14);
        let (inv, ld) = spd_inverse_and_logdet(&Mat::identity(4, 4)).unwrap();
        assert_eq!(inv, Mat::identity(4, 4));
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn correlation_examples() {
        let (r, s) =
            correlation_from_covariance(&Mat::from_diagonal(&Vector::from_vec(vec![4.0, 9.0])))
                .unwrap();
        assert_eq!(r, Mat::identity(2, 2));
        assert_eq!(s.as_slice(), &[2.0, 3.0]);
        let (r, s) =
            correlation_from_covariance(&Mat::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0])).unwrap();
        assert!((r[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(s.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn not_spd_is_rejected() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&a), Err(Error::NotSpd { .. })));
        assert!(matches!(
            spd_inverse_and_logdet(&a),
            Err(Error::NotSpd { .. })
        ));
        assert!(correlation_from_covariance(&a).is_err());
    }

    #[test]
    fn partial_correlation_cases() {
        let r = Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.31523, 0.5, 1.0, 0.3, 0.31523, 0.3, 1.0]);
        assert_eq!(partial_correlation(&r, 0, 2, &[]).unwrap(), 0.31523);
        // R13 = R12 R23 + ρ √((1-R12²)(1-R23²)) with ρ = 0.2
        let rho = partial_correlation(&r, 0, 2, &[1]).unwrap();
        assert!((rho - 0.2).abs() < 1e-5, "{rho}");
        let diag = Mat::identity(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let rest: Vec<usize> = (0..4).filter(|&k| k != i && k != j).collect();
                    assert_eq!(partial_correlation(&diag, i, j, &rest).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn partial_correlation_rejects_bad_sets() {
        let r = Mat::identity(3, 3);
        assert!(partial_correlation(&r, 0, 0, &[]).is_err());
        assert!(partial_correlation(&r, 0, 1, &[1]).is_err());
        let singular = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            partial_correlation(&singular, 0, 1, &[2]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn nearest_correlation_repairs_indefinite_input() {
        let bad = Mat::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(cholesky(&bad).is_err());
        let r = nearest_correlation(&bad, 1e-3).unwrap();
        assert!(cholesky(&r).is_ok());
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
        let good = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert!((nearest_correlation(&good, 1e-3).unwrap() - good).amax() < 1e-14);
    }
}
