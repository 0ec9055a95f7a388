//! Error measures and correlation analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `||value - reference|| / ||reference|| * 100`.
///
/// Zero against zero is a perfect match; a nonzero value against a zero
/// reference is infinitely wrong.
pub fn epsilon(reference: &[f64], value: &[f64]) -> f64 {
    debug_assert_eq!(reference.len(), value.len());
    let diff = norm(reference.iter().zip(value).map(|(r, v)| v - r));
    let base = norm(reference.iter().copied());
    if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        diff / base * 100.0
    }
}

/// Relative error in percent of `estimate` against `truth`.
pub fn rel_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(estimate, truth)?;
    if norm(truth.iter().copied()) == 0.0 {
        return Err(Error::Metric("relative error against a zero reference"));
    }
    Ok(epsilon(truth, estimate))
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(estimate, truth)?;
    if truth.is_empty() {
        return Err(Error::Metric("rmse of empty vectors"));
    }
    let sse: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// RMSE as a percentage of the mean of `truth`.
pub fn nrmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    let r = rmse(estimate, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    if mean == 0.0 {
        return Err(Error::Metric("nrmse with zero mean reference"));
    }
    Ok(r / mean * 100.0)
}

/// Pearson correlation; `None` when either series is constant or too short.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Diagnostics of one evaluation of the calibration map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub iteration: usize,
    /// Observed counts vs. the analytical counts of the BVLS solution.
    pub od_cal_err: f64,
    /// Analytical counts vs. simulated counts.
    pub cal_to_sim_err: f64,
    /// Observed counts vs. simulated counts.
    pub iter_err: f64,
    /// Input vs. output link travel times.
    pub fp_err: f64,
    pub mean_speed: f64,
}

pub const RECORD_FIELDS: [&str; 5] = ["od_cal_err", "cal_to_sim_err", "iter_err", "fp_err", "mean_speed"];

impl ErrorRecord {
    pub fn values(&self) -> [f64; 5] {
        [self.od_cal_err, self.cal_to_sim_err, self.iter_err, self.fp_err, self.mean_speed]
    }
}

/// Pairwise Pearson correlations over the fields in [`RECORD_FIELDS`] order.
pub fn correlation_matrix(records: &[ErrorRecord]) -> [[Option<f64>; 5]; 5] {
    let cols: Vec<Vec<f64>> = (0..5).map(|j| records.iter().map(|r| r.values()[j]).collect()).collect();
    let mut out = [[None; 5]; 5];
    for i in 0..5 {
        for j in i..5 {
            let c = pearson(&cols[i], &cols[j]);
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    out
}
