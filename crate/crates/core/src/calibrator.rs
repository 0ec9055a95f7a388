//! Sequential per-frame OD calibration.
//!
//! One round evaluates the travel-time map: route costs under the input
//! times, assignment matrix, seed scaling, BVLS, route flows, `R` sampled
//! simulations, best-replicate selection and a route-set update. The
//! simulated travel times of the best replicate are the map's output. Rounds
//! are paired by the Steffensen driver in [`crate::fixedpoint`].
//!
//! Counts handed to the upper level are corrected for vehicles carried over
//! from the previous frame. The simulation still replays those vehicles, so
//! errors against simulated counts are measured on the uncorrected scale:
//! corrected counts plus the carried vehicles' remaining sensor hits.

use std::ops::ControlFlow;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{build_assignment, seed_od, NodVector};
use crate::bvls::{self, BoundRule, StackedSystem};
use crate::error::{Error, Result};
use crate::fixedpoint::{clamp_map, steffensen, FixedPointConfig};
use crate::mesosim::{expected_carryover_hits, simulate_frame, FrameState, SimConfig, SimResult};
use crate::metrics::{epsilon, ErrorRecord};
use crate::network::{free_flow_times, Network};
use crate::routing::{add_best_new_routes, init_shortest_paths, RouteDb};
use crate::sampler::{mix_seed, replicate_seed, route_flows, sample_plans, RouteFlow, VehiclePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    /// Frame length in seconds.
    pub delta: u32,
    pub lambda: f64,
    pub gamma: f64,
    pub rho: usize,
    pub replicates: usize,
    /// Map evaluations (calibrate + simulate rounds) per frame.
    pub max_iterations: usize,
    /// Percent; a round whose iteration error is at most this ends the frame.
    pub epsilon_exit: f64,
    pub clamp_factor: f64,
    pub base_seed: u64,
    pub u_factor: f64,
    pub u_floor: f64,
    pub sim: SimConfig,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            delta: 3600,
            lambda: 1.0,
            gamma: -0.01,
            rho: 10,
            replicates: 8,
            max_iterations: 10,
            epsilon_exit: 10.0,
            clamp_factor: 5.0,
            base_seed: 0,
            u_factor: 10.0,
            u_floor: 1.0,
            sim: SimConfig::default(),
        }
    }
}

impl CalibConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if self.delta == 0 {
            return bad("frame length");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda");
        }
        if self.rho == 0 || self.replicates == 0 || self.max_iterations == 0 {
            return bad("rho, replicates and max iterations");
        }
        if !(self.epsilon_exit >= 0.0) {
            return Err(Error::InvalidArgument("exit threshold must be nonnegative".into()));
        }
        if !(self.clamp_factor > 1.0) {
            return Err(Error::InvalidArgument("clamp factor must exceed 1".into()));
        }
        if !(self.u_factor > 0.0 && self.u_floor > 0.0) {
            return bad("bound factor and floor");
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be finite".into()));
        }
        Ok(())
    }

    fn bounds(&self) -> BoundRule {
        BoundRule {
            u_factor: self.u_factor,
            u_floor: self.u_floor,
        }
    }
}

/// Aggregate figures of one round, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub iteration: usize,
    pub total_trips: f64,
    pub analytic_total: f64,
    pub simulated_total: f64,
    pub departures: usize,
    pub carryover: usize,
}

/// Result of the best round of one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: usize,
    pub seed_od: Vec<f64>,
    pub od_estimate: Vec<f64>,
    pub route_flows: Vec<RouteFlow>,
    /// Counts after carryover correction, as fitted by BVLS.
    pub corrected_counts: Vec<f64>,
    /// Remaining sensor hits of vehicles carried in from the previous frame.
    pub carryover_hits: Vec<f64>,
    /// `A X* + carryover_hits`.
    pub analytic_counts: Vec<f64>,
    pub plans: Vec<VehiclePlan>,
    pub sim: SimResult,
    /// One record per round, in order.
    pub records: Vec<ErrorRecord>,
    pub rounds: Vec<RoundSummary>,
    /// Index into `records` of the reported round.
    pub best_iteration: usize,
    /// Minimum-so-far fixed-point error per round.
    pub fp_min_errors: Vec<f64>,
    /// True when some round met the exit threshold.
    pub converged: bool,
    pub bvls_converged: bool,
}

impl FrameOutput {
    pub fn best_record(&self) -> &ErrorRecord {
        &self.records[self.best_iteration]
    }

    /// Corrected counts plus carryover hits: the scale simulated counts live on.
    pub fn observed(&self) -> Vec<f64> {
        self.corrected_counts.iter().zip(&self.carryover_hits).map(|(c, h)| c + h).collect()
    }

    pub fn total_trips(&self) -> f64 {
        self.od_estimate.iter().sum()
    }
}

/// Frame result together with what the next frame needs.
#[derive(Debug, Clone)]
pub struct FrameStep {
    pub output: FrameOutput,
    pub next_state: FrameState,
    pub next_tau: Vec<f64>,
}

/// Argmin of `epsilon(observed, counts)` over replicates; ties go to the
/// lowest index.
pub fn select_best(results: &[SimResult], observed: &[f64]) -> usize {
    select_best_by_error(&results.iter().map(|r| epsilon(observed, &r.counts_f64())).collect::<Vec<_>>())
}

/// Index of the smallest error, first one on ties.
pub fn select_best_by_error(errors: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = i;
        }
    }
    best
}

/// `max(raw - hits, 0)` per sensor.
pub fn correct_counts(raw: &[f64], hits: &[f64]) -> Vec<f64> {
    raw.iter().zip(hits).map(|(r, h)| (r - h).max(0.0)).collect()
}

struct Round {
    seed_od: Vec<f64>,
    x: Vec<f64>,
    flows: Vec<RouteFlow>,
    analytic: Vec<f64>,
    plans: Vec<VehiclePlan>,
    sim: SimResult,
    tau_out: Vec<f64>,
    bvls_converged: bool,
}

fn round_seed(base: u64, frame: usize, iteration: usize) -> u64 {
    mix_seed(base ^ mix_seed(((frame as u64) << 32) ^ iteration as u64))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    net: &Network,
    db: &RouteDb,
    nod: &NodVector,
    counts: &[f64],
    hits: &[f64],
    prev_state: &FrameState,
    tau: &[f64],
    cfg: &CalibConfig,
    seed: u64,
) -> Result<Round> {
    let costs = db.costs(net, tau);
    let a = build_assignment(&costs, net.num_sensors(), cfg.gamma, f64::from(cfg.delta))?;
    let seed_x = seed_od(nod, &a, counts)?;
    let sys = StackedSystem::from_assignment(&a, counts, &seed_x, cfg.lambda, cfg.bounds())?;
    let scale = counts.iter().fold(1.0f64, |m, &c| m.max(c));
    let sol = bvls::solve(&sys, 1e-9 * scale, 50 * sys.num_vars() + 100);
    if !sol.converged {
        debug!("BVLS hit its iteration cap after {} steps", sol.iterations);
    }
    let flows = route_flows(&sol.x, &a, db)?;

    let reps: Vec<(Vec<VehiclePlan>, SimResult)> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let plans = sample_plans(&flows, cfg.delta, replicate_seed(seed, r))?;
            let sim = simulate_frame(net, &plans, prev_state, &cfg.sim, cfg.delta)?;
            Ok((plans, sim))
        })
        .collect::<Result<_>>()?;

    let analytic: Vec<f64> = a.expected_counts(&sol.x).iter().zip(hits).map(|(c, h)| c + h).collect();
    let observed: Vec<f64> = counts.iter().zip(hits).map(|(c, h)| c + h).collect();
    let sims: Vec<SimResult> = reps.iter().map(|(_, s)| s.clone()).collect();
    let best = select_best(&sims, &observed);
    let (plans, sim) = reps.into_iter().nth(best).expect("best replicate exists");
    let nu = free_flow_times(net);
    let tau_out = clamp_map(&sim.tau, &nu, cfg.clamp_factor);
    Ok(Round {
        seed_od: seed_x,
        x: sol.x,
        flows,
        analytic,
        plans,
        sim,
        tau_out,
        bvls_converged: sol.converged,
    })
}

/// Calibrates one frame against carryover-corrected `counts`.
///
/// Route sets in `db` grow as rounds proceed. Returns the round with the
/// smallest iteration error, its end-of-frame state and travel times.
#[allow(clippy::too_many_arguments)]
pub fn run_frame(
    net: &Network,
    db: &mut RouteDb,
    nod: &NodVector,
    counts: &[f64],
    prev_state: &FrameState,
    prev_tau: &[f64],
    cfg: &CalibConfig,
    frame: usize,
) -> Result<FrameStep> {
    cfg.check()?;
    if counts.len() != net.num_sensors() || nod.len() != net.num_od_pairs() {
        return Err(Error::Dimension(format!(
            "{} counts for {} sensors, {} NOD entries for {} OD pairs",
            counts.len(),
            net.num_sensors(),
            nod.len(),
            net.num_od_pairs()
        )));
    }
    if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidArgument("counts must be finite and nonnegative".into()));
    }
    let hits = expected_carryover_hits(prev_state, net);
    let observed: Vec<f64> = counts.iter().zip(&hits).map(|(c, h)| c + h).collect();
    let nu = free_flow_times(net);

    let mut records: Vec<ErrorRecord> = Vec::new();
    let mut rounds: Vec<RoundSummary> = Vec::new();
    let mut best: Option<Round> = None;
    let mut best_err = f64::INFINITY;
    let mut converged = false;

    let fp_cfg = FixedPointConfig {
        clamp_factor: cfg.clamp_factor,
        max_evals: cfg.max_iterations,
        tolerance: 0.0,
    };
    let run = steffensen(prev_tau, &nu, &fp_cfg, |tau_in: &[f64]| -> Result<_> {
        let iteration = records.len();
        let round = evaluate(
            net,
            db,
            nod,
            counts,
            &hits,
            prev_state,
            tau_in,
            cfg,
            round_seed(cfg.base_seed, frame, iteration),
        )?;
        add_best_new_routes(db, net, &round.tau_out);
        let sim_counts = round.sim.counts_f64();
        let record = ErrorRecord {
            iteration,
            od_cal_err: epsilon(&observed, &round.analytic),
            cal_to_sim_err: epsilon(&round.analytic, &sim_counts),
            iter_err: epsilon(&observed, &sim_counts),
            fp_err: epsilon(tau_in, &round.tau_out),
            mean_speed: round.sim.mean_speed,
        };
        debug!(
            "frame {frame} round {iteration}: iter_err {:.3}% fp_err {:.3}%",
            record.iter_err, record.fp_err
        );
        records.push(record);
        rounds.push(RoundSummary {
            iteration,
            total_trips: round.x.iter().sum(),
            analytic_total: round.analytic.iter().sum(),
            simulated_total: sim_counts.iter().sum(),
            departures: round.sim.departures,
            carryover: round.sim.carryover(),
        });
        let tau_out = round.tau_out.clone();
        if best.is_none() || record.iter_err < best_err {
            best_err = record.iter_err;
            best = Some(round);
        }
        if record.iter_err <= cfg.epsilon_exit {
            converged = true;
            Ok(ControlFlow::Break(tau_out))
        } else {
            Ok(ControlFlow::Continue(tau_out))
        }
    })?;

    let best_iteration = select_best_by_error(&records.iter().map(|r| r.iter_err).collect::<Vec<_>>());
    let round = best.expect("at least one round ran");
    info!(
        "frame {frame}: {} rounds, best iteration error {:.3}% at round {best_iteration}",
        records.len(),
        records[best_iteration].iter_err
    );
    let next_state = round.sim.state.clone();
    let next_tau = round.tau_out.clone();
    Ok(FrameStep {
        output: FrameOutput {
            frame,
            seed_od: round.seed_od,
            od_estimate: round.x,
            route_flows: round.flows,
            corrected_counts: counts.to_vec(),
            carryover_hits: hits,
            analytic_counts: round.analytic,
            plans: round.plans,
            sim: round.sim,
            records,
            rounds,
            best_iteration,
            fp_min_errors: run.min_errors,
            converged,
            bvls_converged: round.bvls_converged,
        },
        next_state,
        next_tau,
    })
}

/// Streaming driver: feed raw frame counts in order, get each frame's output
/// before the next frame is needed.
pub struct Calibrator<'a> {
    net: &'a Network,
    nod: NodVector,
    cfg: CalibConfig,
    db: RouteDb,
    state: FrameState,
    tau: Vec<f64>,
    next_frame: usize,
}

impl<'a> Calibrator<'a> {
    pub fn new(net: &'a Network, nod: NodVector, cfg: CalibConfig) -> Result<Self> {
        cfg.check()?;
        if nod.len() != net.num_od_pairs() {
            return Err(Error::Dimension(format!(
                "{} NOD entries for {} OD pairs",
                nod.len(),
                net.num_od_pairs()
            )));
        }
        let tau = free_flow_times(net);
        let db = init_shortest_paths(net, &tau, cfg.rho)?;
        Ok(Calibrator {
            net,
            nod,
            cfg,
            db,
            state: FrameState::empty(net),
            tau,
            next_frame: 0,
        })
    }

    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    pub fn state(&self) -> &FrameState {
        &self.state
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn route_db(&self) -> &RouteDb {
        &self.db
    }

    pub fn config(&self) -> &CalibConfig {
        &self.cfg
    }

    /// Sensor hits still owed by vehicles in the current carryover state.
    pub fn pending_hits(&self) -> Vec<f64> {
        expected_carryover_hits(&self.state, self.net)
    }

    pub fn push_frame(&mut self, frame: usize, raw_counts: &[f64]) -> Result<FrameOutput> {
        if frame != self.next_frame {
            return Err(Error::OutOfOrderFrame {
                expected: self.next_frame,
                got: frame,
            });
        }
        if raw_counts.len() != self.net.num_sensors() {
            return Err(Error::Dimension(format!(
                "frame {frame}: {} counts for {} sensors",
                raw_counts.len(),
                self.net.num_sensors()
            )));
        }
        let corrected = correct_counts(raw_counts, &self.pending_hits());
        let step = run_frame(
            self.net,
            &mut self.db,
            &self.nod,
            &corrected,
            &self.state,
            &self.tau,
            &self.cfg,
            frame,
        )?;
        self.state = step.next_state;
        self.tau = step.next_tau;
        self.next_frame += 1;
        Ok(step.output)
    }
}

/// Calibrates consecutive frames of raw counts.
pub fn run_sequence<I>(net: &Network, nod: &NodVector, frames: I, cfg: &CalibConfig) -> Result<Vec<FrameOutput>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut cal = Calibrator::new(net, nod.clone(), cfg.clone())?;
    frames
        .into_iter()
        .enumerate()
        .map(|(t, counts)| cal.push_frame(t, &counts))
        .collect()
}
