//! Route-level disaggregation and per-second departure sampling.
//!
//! Every route `i` emits at most one departure per second, each second
//! independently with probability `E_i / delta`. The sampler walks the gaps
//! between successes with a geometric distribution, which yields exactly the
//! same law as flipping one coin per second at a cost proportional to the
//! number of trips.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::assignment::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::routing::RouteDb;

/// Expected trips on route `route` of OD pair `od`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteFlow {
    pub od: usize,
    pub route: usize,
    pub links: Arc<[usize]>,
    pub expected_trips: f64,
}

impl RouteFlow {
    pub fn label(&self) -> String {
        format!("{}:{}", self.od, self.route)
    }
}

/// One vehicle trip on a fixed route with an integer departure second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehiclePlan {
    pub od: usize,
    pub route: usize,
    pub links: Arc<[usize]>,
    pub departure: u32,
}

/// `E_i = x_m * P_i` for every stored route.
pub fn route_flows(x_star: &[f64], a: &AssignmentMatrix, db: &RouteDb) -> Result<Vec<RouteFlow>> {
    if x_star.len() != a.num_od_pairs() || db.num_od_pairs() != a.num_od_pairs() {
        return Err(Error::Dimension(format!(
            "{} OD values, {} assignment rows, {} route sets",
            x_star.len(),
            a.num_od_pairs(),
            db.num_od_pairs()
        )));
    }
    let mut flows = Vec::with_capacity(db.total_routes());
    for (m, routes) in db.iter().enumerate() {
        let probs = a.route_probs(m);
        if probs.len() != routes.len() {
            return Err(Error::Dimension(format!(
                "od pair {m}: {} route probabilities for {} routes",
                probs.len(),
                routes.len()
            )));
        }
        for (i, (route, &p)) in routes.iter().zip(probs).enumerate() {
            flows.push(RouteFlow {
                od: m,
                route: i,
                links: Arc::from(route.links.as_slice()),
                expected_trips: x_star[m] * p,
            });
        }
    }
    Ok(flows)
}

/// Seed for replicate `r` of a sampling round.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    base ^ r
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples departures for every flow over the seconds `0..delta`.
///
/// Each flow draws from its own stream keyed by its position, so the result
/// does not depend on how flows are processed. Plans are returned sorted by
/// departure, then OD pair, then route.
pub fn sample_plans(flows: &[RouteFlow], delta: u32, seed: u64) -> Result<Vec<VehiclePlan>> {
    let horizon = f64::from(delta);
    for f in flows {
        if !(f.expected_trips >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "route {} has invalid expected trips {}",
                f.label(),
                f.expected_trips
            )));
        }
        if f.expected_trips > horizon {
            return Err(Error::BernoulliOverflow {
                route: f.label(),
                expected: f.expected_trips,
                delta: horizon,
            });
        }
    }

    let mut plans = Vec::new();
    for (idx, f) in flows.iter().enumerate() {
        let p = f.expected_trips / horizon;
        if p <= 0.0 || delta == 0 {
            continue;
        }
        let push = |plans: &mut Vec<VehiclePlan>, t: u64| {
            plans.push(VehiclePlan {
                od: f.od,
                route: f.route,
                links: Arc::clone(&f.links),
                departure: t as u32,
            })
        };
        if p >= 1.0 {
            (0..u64::from(delta)).for_each(|t| push(&mut plans, t));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ mix_seed(idx as u64)));
        let gap = Geometric::new(p).expect("0 < p < 1");
        // `gap` counts failures before the next success.
        let mut t = gap.sample(&mut rng);
        while t < u64::from(delta) {
            push(&mut plans, t);
            t = t.saturating_add(1).saturating_add(gap.sample(&mut rng));
        }
    }
    plans.sort_by_key(|p| (p.departure, p.od, p.route));
    Ok(plans)
}
