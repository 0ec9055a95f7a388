//! Synthetic scenarios: grid network, random demand, ground-truth routes and
//! per-frame sensor counts.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{logit_probs, NodVector};
use crate::error::{Error, Result};
use crate::mesosim::{simulate_frame, FrameState, SimConfig, SimResult};
use crate::network::{free_flow_times, generate_grid, GridSpec, Network};
use crate::routing::KShortest;
use crate::sampler::{mix_seed, VehiclePlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandProtocol {
    /// Uniform integer trip count in `[lo, hi]` per OD pair over the whole
    /// duration, each trip with a uniform departure second.
    Count { lo: u32, hi: u32 },
    /// Uniform rate in `[lo, hi]` trips per hour per OD pair; each second
    /// starts a trip with probability `rate / 3600`.
    Rate { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    pub demand: DemandProtocol,
    /// Seconds; a multiple of `frame`.
    pub duration: u32,
    pub frame: u32,
    pub seed: u64,
    /// Free-flow shortest paths offered to each OD pair.
    pub route_candidates: usize,
    /// Route-assignment draws; the one with least total travel time wins.
    pub assign_replicates: usize,
    pub gamma: f64,
    pub sim: SimConfig,
}

impl ScenarioSpec {
    pub fn new(grid: GridSpec, demand: DemandProtocol, duration: u32, frame: u32, seed: u64) -> Self {
        ScenarioSpec {
            grid,
            demand,
            duration,
            frame,
            seed,
            route_candidates: 3,
            assign_replicates: 4,
            gamma: -0.01,
            sim: SimConfig::default(),
        }
    }

    pub fn num_frames(&self) -> usize {
        (self.duration / self.frame) as usize
    }

    fn check(&self) -> Result<()> {
        if self.frame == 0 || self.duration == 0 || !self.duration.is_multiple_of(self.frame) {
            return Err(Error::InvalidArgument(format!(
                "duration {} must be a positive multiple of the frame length {}",
                self.duration, self.frame
            )));
        }
        match self.demand {
            DemandProtocol::Count { lo, hi } if lo > hi => {
                return Err(Error::InvalidArgument(format!("empty count range [{lo}, {hi}]")))
            }
            DemandProtocol::Rate { lo, hi } if !(lo >= 0.0 && lo <= hi && hi <= 3600.0) => {
                return Err(Error::InvalidArgument(format!("bad rate range [{lo}, {hi}]")))
            }
            _ => {}
        }
        if self.route_candidates == 0 || self.assign_replicates == 0 {
            return Err(Error::InvalidArgument("need at least one route candidate and replicate".into()));
        }
        Ok(())
    }
}

/// A trip with an absolute departure second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trip {
    pub departure: u32,
    pub od: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: Network,
    /// Plans with absolute departure seconds, sorted by departure.
    pub plans: Vec<VehiclePlan>,
    pub frame: u32,
    pub num_frames: usize,
    pub nod: NodVector,
}

impl Scenario {
    /// Trips per OD pair departing in each frame.
    pub fn true_od(&self) -> Vec<Vec<f64>> {
        true_od(&self.plans, self.net.num_od_pairs(), self.frame, self.num_frames)
    }
}

pub fn true_od(plans: &[VehiclePlan], num_od: usize, frame: u32, num_frames: usize) -> Vec<Vec<f64>> {
    let mut od = vec![vec![0.0; num_od]; num_frames];
    for p in plans {
        let t = (p.departure / frame) as usize;
        if t < num_frames {
            od[t][p.od] += 1.0;
        }
    }
    od
}

/// Samples trips per the demand protocol, sorted by departure then OD pair.
pub fn generate_trips(num_od: usize, demand: DemandProtocol, duration: u32, seed: u64) -> Vec<Trip> {
    let mut trips = Vec::new();
    for m in 0..num_od {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ mix_seed(m as u64)));
        match demand {
            DemandProtocol::Count { lo, hi } => {
                let n = rng.random_range(lo..=hi);
                for _ in 0..n {
                    trips.push(Trip { departure: rng.random_range(0..duration), od: m });
                }
            }
            DemandProtocol::Rate { lo, hi } => {
                let rate = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let p = rate / 3600.0;
                if p <= 0.0 {
                    continue;
                }
                if p >= 1.0 {
                    trips.extend((0..duration).map(|t| Trip { departure: t, od: m }));
                    continue;
                }
                let gap = Geometric::new(p).expect("0 < p < 1");
                let mut t = gap.sample(&mut rng);
                while t < u64::from(duration) {
                    trips.push(Trip { departure: t as u32, od: m });
                    t = t.saturating_add(1).saturating_add(gap.sample(&mut rng));
                }
            }
        }
    }
    trips.sort_unstable();
    trips
}

/// Normalized whole-period OD distribution of `trips`.
pub fn nod_from_trips(trips: &[Trip], num_od: usize) -> Result<NodVector> {
    let mut w = vec![0.0; num_od];
    for t in trips {
        w[t.od] += 1.0;
    }
    let total = trips.len().max(1) as f64;
    NodVector::new(w.into_iter().map(|x| x / total).collect())
}

/// The `k` shortest routes of every OD pair under `tau`.
pub fn candidate_routes(net: &Network, tau: &[f64], k: usize) -> Vec<Vec<Arc<[usize]>>> {
    (0..net.num_od_pairs())
        .into_par_iter()
        .map(|m| {
            let (o, d) = net.od_pairs()[m];
            KShortest::new(net, tau, o, d).take(k).map(|(_, links)| Arc::from(links)).collect()
        })
        .collect()
}

/// Picks a route per trip by logit over route costs under `tau`.
fn assign_routes(
    trips: &[Trip],
    candidates: &[Vec<Arc<[usize]>>],
    tau: &[f64],
    gamma: f64,
    seed: u64,
) -> Result<Vec<VehiclePlan>> {
    let probs: Vec<Vec<f64>> = candidates
        .iter()
        .enumerate()
        .map(|(m, c)| {
            if c.is_empty() {
                return Err(Error::EmptyRouteSet(m));
            }
            let thetas: Vec<f64> = c.iter().map(|r| r.iter().map(|&l| tau[l]).sum()).collect();
            logit_probs(&thetas, gamma)
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(trips
        .iter()
        .map(|t| {
            let u: f64 = rng.random();
            let p = &probs[t.od];
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            VehiclePlan {
                od: t.od,
                route: pick,
                links: Arc::clone(&candidates[t.od][pick]),
                departure: t.departure,
            }
        })
        .collect())
}

/// Simulates consecutive frames with state handoff. `plans` carry absolute
/// departure seconds.
pub fn simulate_frames(
    net: &Network,
    plans: &[VehiclePlan],
    frame: u32,
    num_frames: usize,
    cfg: &SimConfig,
) -> Result<Vec<SimResult>> {
    let mut state = FrameState::empty(net);
    let mut out = Vec::with_capacity(num_frames);
    for t in 0..num_frames as u32 {
        let (start, end) = (t * frame, (t + 1) * frame);
        let local: Vec<VehiclePlan> = plans
            .iter()
            .filter(|p| p.departure >= start && p.departure < end)
            .map(|p| VehiclePlan { departure: p.departure - start, ..p.clone() })
            .collect();
        let res = simulate_frame(net, &local, &state, cfg, frame)?;
        state = res.state.clone();
        out.push(res);
    }
    Ok(out)
}

/// Total time spent in the network: finished trips plus time so far of the
/// vehicles still travelling at the end.
pub fn total_travel_time(results: &[SimResult], step: f64) -> f64 {
    let done: f64 = results.iter().flat_map(|r| r.trip_durations.iter()).sum();
    let open = results.last().map_or(0.0, |r| {
        r.state.vehicles().map(|v| (r.state.clock - v.departed_at) as f64 * step).sum()
    });
    done + open
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.check()?;
    let net = generate_grid(&spec.grid)?;
    let trips = generate_trips(net.num_od_pairs(), spec.demand, spec.duration, spec.seed);
    let nod = nod_from_trips(&trips, net.num_od_pairs())?;
    let num_frames = spec.num_frames();
    let nu = free_flow_times(&net);

    // Each draw routes under the travel times the previous draw experienced;
    // the draw with the least total travel time is kept.
    let mut tau = nu.clone();
    let mut best: Option<(f64, Vec<VehiclePlan>)> = None;
    for r in 0..spec.assign_replicates as u64 {
        let candidates = candidate_routes(&net, &tau, spec.route_candidates);
        let plans = assign_routes(&trips, &candidates, &tau, spec.gamma, mix_seed(spec.seed ^ mix_seed(!r)))?;
        let res = simulate_frames(&net, &plans, spec.frame, num_frames, &spec.sim)?;
        let ttt = total_travel_time(&res, spec.sim.step);
        tau = (0..nu.len())
            .map(|l| (res.iter().map(|f| f.tau[l]).sum::<f64>() / res.len() as f64).max(nu[l]))
            .collect();
        if best.as_ref().is_none_or(|b| ttt < b.0) {
            best = Some((ttt, plans));
        }
    }
    let plans = best.expect("at least one draw").1;
    Ok(Scenario {
        net,
        plans,
        frame: spec.frame,
        num_frames,
        nod,
    })
}
