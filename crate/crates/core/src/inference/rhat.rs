use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Split-R̂ of one trajectory: halves of length `n`, within-half variance
/// `W` (mean of the two sample variances), `B = n · var(half means)`,
/// `V = ((n−1)/n) W + B/n`, `R̂ = √(V/W)`. `None` when `W = 0` or the
/// trajectory is too short or odd.
pub fn split_rhat(traj: &[f64]) -> Option<f64> {
    if traj.len() < 4 || !traj.len().is_multiple_of(2) {
        return None;
    }
    let n = traj.len() / 2;
    let nf = n as f64;
    let (a, b) = traj.split_at(n);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / nf;
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nf - 1.0);
    let (ma, mb) = (mean(a), mean(b));
    let w = 0.5 * (var(a, ma) + var(b, mb));
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let grand = 0.5 * (ma + mb);
    // sample variance of the two half means (denominator 1)
    let b_var = nf * ((ma - grand).powi(2) + (mb - grand).powi(2));
    let v = (nf - 1.0) / nf * w + b_var / nf;
    Some((v / w).sqrt())
}

/// Per-scalar split-R̂ over a window of parameter snapshots.
pub fn split_rhat_window(snapshots: &[Vec<f64>]) -> Vec<Option<f64>> {
    let k = snapshots.first().map_or(0, |s| s.len());
    (0..k)
        .map(|i| {
            let traj: Vec<f64> = snapshots.iter().map(|s| s[i]).collect();
            split_rhat(&traj)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Snapshots kept (even).
    #[serde(default = "default_window")]
    pub window: usize,
    /// Iterations between snapshots.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_window() -> usize {
    400
}

fn default_check_every() -> usize {
    10
}

fn default_threshold() -> f64 {
    1.1
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            check_every: default_check_every(),
            threshold: default_threshold(),
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 4 || !self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "R-hat window must be even and >= 4, got {}",
                self.window
            )));
        }
        if self.check_every == 0 {
            return Err(Error::invalid("check_every must be positive"));
        }
        if !(self.threshold > 1.0) {
            return Err(Error::invalid(format!(
                "R-hat threshold must exceed 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhatStatus {
    /// Window not yet full.
    Filling,
    /// Every monitored scalar below the threshold.
    Converged,
    /// Largest R̂ at or above the threshold.
    NotConverged(f64),
    /// Some scalar has zero within-half variance.
    Degenerate,
}

/// Ring buffer of parameter snapshots with split-R̂ checks.
#[derive(Debug, Clone)]
pub struct RhatMonitor {
    cfg: MonitorConfig,
    buffer: VecDeque<Vec<f64>>,
    iter: usize,
}

impl RhatMonitor {
    pub fn new(cfg: MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            buffer: VecDeque::with_capacity(cfg.window + 1),
            iter: 0,
        })
    }

    /// Records the parameters after one iteration; returns the status when a
    /// snapshot was taken.
    pub fn observe(&mut self, params: &[f64]) -> Option<RhatStatus> {
        self.iter += 1;
        if !self.iter.is_multiple_of(self.cfg.check_every) {
            return None;
        }
        self.buffer.push_back(params.to_vec());
        if self.buffer.len() > self.cfg.window {
            self.buffer.pop_front();
        }
        Some(self.status())
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.cfg.window
    }

    pub fn status(&self) -> RhatStatus {
        if !self.is_full() {
            return RhatStatus::Filling;
        }
        let snaps: Vec<Vec<f64>> = self.buffer.iter().cloned().collect();
        let mut worst: f64 = 0.0;
        for r in split_rhat_window(&snaps) {
            match r {
                None => return RhatStatus::Degenerate,
                Some(r) => worst = worst.max(r),
            }
        }
        if worst < self.cfg.threshold {
            RhatStatus::Converged
        } else {
            RhatStatus::NotConverged(worst)
        }
    }

    /// Componentwise mean of the window, written as `x₀ + mean(x − x₀)` so a
    /// constant window reproduces its value bitwise.
    pub fn window_mean(&self) -> Option<Vec<f64>> {
        let first = self.buffer.front()?;
        let n = self.buffer.len() as f64;
        Some(
            (0..first.len())
                .map(|i| first[i] + self.buffer.iter().map(|s| s[i] - first[i]).sum::<f64>() / n)
                .collect(),
        )
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.buffer.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn hand_example() {
        let r = split_rhat(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_trajectory_is_degenerate() {
        assert_eq!(split_rhat(&[2.0; 10]), None);
        assert_eq!(split_rhat(&[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn white_noise_is_near_one() {
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let traj: Vec<f64> = (0..400).map(|_| rng.standard_normal()).collect();
            let r = split_rhat(&traj).unwrap();
            assert!((0.95..=1.05).contains(&r), "{r}");
        }
    }

    #[test]
    fn monitor_fills_then_checks() {
        let mut m = RhatMonitor::new(MonitorConfig {
            window: 4,
            check_every: 2,
            threshold: 1.1,
        })
        .unwrap();
        assert_eq!(m.observe(&[0.0]), None);
        assert_eq!(m.observe(&[0.0]), Some(RhatStatus::Filling));
        for _ in 0..9 {
            m.observe(&[1.0]);
        }
        assert_eq!(m.observe(&[1.0]), Some(RhatStatus::Degenerate));
        assert_eq!(m.window_mean().unwrap(), vec![1.0]);
        let mut m = RhatMonitor::new(MonitorConfig {
            window: 4,
            check_every: 1,
            threshold: 1.1,
        })
        .unwrap();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.observe(&[x]);
        }
        assert!(
            matches!(m.status(), RhatStatus::NotConverged(r) if (r - 4.5f64.sqrt()).abs() < 1e-15)
        );
        for x in [1.0, -1.0, 1.0, -1.0] {
            m.observe(&[x]);
        }
        assert_eq!(m.status(), RhatStatus::Converged);
    }

    #[test]
    fn config_validation() {
        assert!(RhatMonitor::new(MonitorConfig {
            window: 5,
            ..Default::default()
        })
        .is_err());
        assert!(RhatMonitor::new(MonitorConfig {
            threshold: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}
