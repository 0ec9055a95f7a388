//! Demand-to-sensor mapping.
//!
//! Route choice follows a multinomial logit over route travel times. A trip
//! departing uniformly at random in a frame of length `delta` reaches a sensor
//! `theta_ik` seconds downstream of its origin with probability
//! `(delta - theta_ik) / delta`. Summing over routes weighted by their choice
//! probability gives the assignment matrix entry `alpha[m][k]`.

use log::warn;

use crate::error::{Error, Result};
use crate::routing::RouteCosts;

/// Normalized prior trip distribution over OD pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NodVector {
    eta: Vec<f64>,
}

impl NodVector {
    /// Normalizes `weights` to sum 1. An all-zero vector is kept as is.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "NOD weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            warn!("NOD has no mass; every OD pair gets zero prior demand");
            return Ok(NodVector { eta: weights });
        }
        if (total - 1.0).abs() > 1e-9 {
            warn!("NOD weights sum to {total}; renormalizing");
        }
        Ok(NodVector {
            eta: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

/// Sparse `|W| x q` matrix of sensor crossing probabilities plus the route
/// choice probabilities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    num_sensors: usize,
    /// Per OD pair: `(sensor, alpha)` with alpha > 0, ascending sensor index.
    rows: Vec<Vec<(usize, f64)>>,
    route_probs: Vec<Vec<f64>>,
}

impl AssignmentMatrix {
    pub fn num_od_pairs(&self) -> usize {
        self.rows.len()
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    /// Nonzero entries of row `m`.
    pub fn row(&self, m: usize) -> &[(usize, f64)] {
        &self.rows[m]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn alpha(&self, m: usize, k: usize) -> f64 {
        self.rows[m]
            .binary_search_by_key(&k, |&(s, _)| s)
            .map_or(0.0, |i| self.rows[m][i].1)
    }

    pub fn route_probs(&self, m: usize) -> &[f64] {
        &self.route_probs[m]
    }

    /// Expected sensor counts `A^T x` (length q) for an OD vector `x`.
    pub fn expected_counts(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_sensors];
        for (row, &xm) in self.rows.iter().zip(x) {
            for &(k, a) in row {
                out[k] += a * xm;
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Logit choice probabilities `exp(gamma * theta_i) / sum_s exp(gamma * theta_s)`,
/// evaluated with the largest exponent subtracted.
pub fn logit_probs(thetas: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("logit over an empty route set".into()));
    }
    let max = thetas
        .iter()
        .map(|&t| gamma * t)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = thetas.iter().map(|&t| (gamma * t - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Probability that a uniformly departing trip crosses a sensor `theta_ik`
/// seconds into its route before the frame closes.
pub fn crossing_prob(delta: f64, theta_ik: f64) -> f64 {
    if delta > theta_ik {
        (delta - theta_ik) / delta
    } else {
        0.0
    }
}

/// `alpha[m][k] = sum_i P_ik * P_i` over the routes of every OD pair.
///
/// `costs[m][i]` must hold the costs of route `i` of OD pair `m`.
pub fn build_assignment(
    costs: &[Vec<RouteCosts>],
    num_sensors: usize,
    gamma: f64,
    delta: f64,
) -> Result<AssignmentMatrix> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("frame length must be positive".into()));
    }
    let mut rows = Vec::with_capacity(costs.len());
    let mut route_probs = Vec::with_capacity(costs.len());
    let mut dense = vec![0.0; num_sensors];
    let mut touched = Vec::new();
    for (m, routes) in costs.iter().enumerate() {
        if routes.is_empty() {
            return Err(Error::EmptyRouteSet(m));
        }
        let thetas: Vec<f64> = routes.iter().map(|c| c.theta).collect();
        let probs = logit_probs(&thetas, gamma)?;
        for (rc, &p) in routes.iter().zip(&probs) {
            for &(k, t) in &rc.sensor_times {
                let pk = crossing_prob(delta, t);
                if pk > 0.0 {
                    if dense[k] == 0.0 {
                        touched.push(k);
                    }
                    dense[k] += pk * p;
                }
            }
        }
        touched.sort_unstable();
        let row = touched
            .iter()
            .map(|&k| (k, std::mem::take(&mut dense[k]).clamp(0.0, 1.0)))
            .collect();
        touched.clear();
        rows.push(row);
        route_probs.push(probs);
    }
    Ok(AssignmentMatrix {
        num_sensors,
        rows,
        route_probs,
    })
}

/// Seed OD vector `sigma * eta` with `sigma = sum(counts) / sum_m eta_m sum_k alpha_mk`.
pub fn seed_od(nod: &NodVector, a: &AssignmentMatrix, counts: &[f64]) -> Result<Vec<f64>> {
    if nod.len() != a.num_od_pairs() || counts.len() != a.num_sensors() {
        return Err(Error::Dimension(format!(
            "NOD has {} entries, counts {}, assignment is {}x{}",
            nod.len(),
            counts.len(),
            a.num_od_pairs(),
            a.num_sensors()
        )));
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Ok(vec![0.0; nod.len()]);
    }
    let s = expected_hits_per_trip(nod, a);
    if !(s > 0.0) {
        return Err(Error::InfeasibleSeed);
    }
    let sigma = total / s;
    Ok(nod.as_slice().iter().map(|&eta| (sigma * eta).max(0.0)).collect())
}

/// Expected number of sensor hits of one random vehicle plan drawn from the NOD.
pub fn expected_hits_per_trip(nod: &NodVector, a: &AssignmentMatrix) -> f64 {
    nod.as_slice()
        .iter()
        .zip(a.rows())
        .map(|(&eta, row)| eta * row.iter().map(|&(_, v)| v).sum::<f64>())
        .sum()
}
