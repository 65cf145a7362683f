use crate::{Error, Result};

/// Relative KL gaps to the best entry of an α-sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaKl {
    /// `(α, gap)` in input order.
    pub values: Vec<(f64, f64)>,
    /// The minimum was too close to zero to divide by, so `values` holds
    /// absolute differences.
    pub degenerate: bool,
}

/// `(KL_α − KL_min) / |KL_min|`.
pub fn delta_kl_rel(kl: &[(f64, f64)]) -> Result<DeltaKl> {
    if kl.is_empty() {
        return Err(Error::invalid("empty KL table"));
    }
    if kl.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid("non-finite KL value"));
    }
    let min = kl.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let degenerate = min.abs() < 1e-12;
    let scale = if degenerate { 1.0 } else { min.abs() };
    let values = kl.iter().map(|&(a, v)| (a, (v - min) / scale)).collect();
    Ok(DeltaKl { values, degenerate })
}

/// `(1/d) Σ |σ_j − σ̂_j| / σ_j`.
pub fn mean_rel_rmse_std(true_stds: &[f64], est_stds: &[f64]) -> Result<f64> {
    if true_stds.len() != est_stds.len() {
        return Err(Error::DimensionMismatch {
            expected: true_stds.len(),
            actual: est_stds.len(),
        });
    }
    if true_stds.is_empty() || true_stds.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("true stds must be positive"));
    }
    let total: f64 = true_stds
        .iter()
        .zip(est_stds)
        .map(|(s, e)| (s - e).abs() / s)
        .sum();
    Ok(total / true_stds.len() as f64)
}
