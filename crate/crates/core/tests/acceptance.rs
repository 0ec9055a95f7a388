//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line; the
//! process exits nonzero if any criterion fails.

use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use odcal_core::assignment::build_assignment;
use odcal_core::bvls::{solve, StackedSystem};
use odcal_core::fixedpoint::{iterate, steffensen, steffensen_step, FixedPointConfig};
use odcal_core::mesosim::{save_state, simulate_frame, FrameState, SimConfig};
use odcal_core::metrics::{correlation_matrix, epsilon};
use odcal_core::network::{free_flow_times, SignalSpec};
use odcal_core::routing::RouteCosts;
use odcal_core::sampler::{replicate_seed, sample_plans};
use odcal_core::scenario::{candidate_routes, simulate_frames};
use odcal_core::{
    build_scenario, generate_grid, run_sequence, CalibConfig, DemandProtocol, FrameOutput, GridSpec, Network,
    PoiSelector, RouteFlow, Scenario, ScenarioSpec, VehiclePlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct SmallGrid {
    sc: Scenario,
    counts: Vec<Vec<f64>>,
}

fn small_grid() -> SmallGrid {
    let spec = ScenarioSpec {
        gamma: -0.05,
        ..ScenarioSpec::new(
            GridSpec::new(4, 4, 400.0),
            DemandProtocol::Count { lo: 20, hi: 35 },
            4 * 3600,
            3600,
            7,
        )
    };
    let sc = build_scenario(&spec).unwrap();
    let truth = simulate_frames(&sc.net, &sc.plans, 3600, 4, &spec.sim).unwrap();
    let counts = truth.iter().map(|r| r.counts_f64()).collect();
    SmallGrid { sc, counts }
}

fn calibrate_small(g: &SmallGrid, lambda: f64) -> Vec<FrameOutput> {
    let cfg = CalibConfig {
        lambda,
        gamma: -0.05,
        rho: 10,
        replicates: 8,
        max_iterations: 40,
        epsilon_exit: 0.0,
        base_seed: 11,
        ..Default::default()
    };
    run_sequence(&g.sc.net, &g.sc.nod, g.counts.clone(), &cfg).unwrap()
}

fn sensor_eps(g: &SmallGrid, out: &[FrameOutput]) -> Vec<f64> {
    out.iter().zip(&g.counts).map(|(f, c)| epsilon(c, &f.sim.counts_f64())).collect()
}

fn od_eps(g: &SmallGrid, out: &[FrameOutput]) -> Vec<f64> {
    out.iter().zip(g.sc.true_od()).map(|(f, t)| epsilon(&t, &f.od_estimate)).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn closed_loop(g: &SmallGrid) -> Outcome {
    let t0 = Instant::now();
    let out = calibrate_small(g, 1.0);
    let sens = sensor_eps(g, &out);
    let truth = g.sc.true_od();
    let totals: Vec<f64> = out
        .iter()
        .zip(&truth)
        .map(|(f, t)| {
            let true_total: f64 = t.iter().sum();
            (f.total_trips() - true_total).abs() / true_total * 100.0
        })
        .collect();
    let ok = sens.iter().all(|&e| e <= 20.0) && totals.iter().all(|&e| e <= 20.0);
    check(
        ok,
        format!(
            "sensor eps [{}] %, total trip error [{}] % (limits 20, 20), {:.1} s",
            fmt_list(&sens),
            fmt_list(&totals),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn lambda_direction(g: &SmallGrid) -> Outcome {
    let low = calibrate_small(g, 0.01);
    let high = calibrate_small(g, 100.0);
    let (s_low, s_high) = (sensor_eps(g, &low), sensor_eps(g, &high));
    let (o_low, o_high) = (od_eps(g, &low), od_eps(g, &high));
    let ok = mean(&s_low) < mean(&s_high) && mean(&o_high) < mean(&o_low);
    check(
        ok,
        format!(
            "sensor eps lambda=0.01 [{}] vs lambda=100 [{}]; OD eps lambda=0.01 [{}] vs lambda=100 [{}]",
            fmt_list(&s_low),
            fmt_list(&s_high),
            fmt_list(&o_low),
            fmt_list(&o_high)
        ),
    )
}

fn steffensen_acceleration() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 50;
    let nu: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..60.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.9)).collect();
    let fixed: Vec<f64> = nu.iter().map(|&v| v * rng.random_range(1.5..4.0)).collect();
    let b: Vec<f64> = (0..n).map(|j| fixed[j] * (1.0 - a[j])).collect();
    let tau0: Vec<f64> = nu.iter().map(|&v| v * rng.random_range(1.2..4.8)).collect();
    let map = |t: &[f64]| -> odcal_core::Result<ControlFlow<Vec<f64>, Vec<f64>>> {
        Ok(ControlFlow::Continue((0..n).map(|j| a[j] * t[j] + b[j]).collect()))
    };
    let cfg = FixedPointConfig { max_evals: 3, ..Default::default() };
    let run = steffensen(&tau0, &nu, &cfg, map).unwrap();
    let exact_err = run.inputs[2].iter().zip(&fixed).map(|(x, f)| (x - f).abs()).fold(0.0, f64::max);
    let mut direct = map(&tau0).unwrap().continue_value().unwrap();
    let t2 = map(&direct).unwrap().continue_value().unwrap();
    direct = steffensen_step(&tau0, &direct, &t2, &nu, 5.0);
    let step_err = direct.iter().zip(&fixed).map(|(x, f)| (x - f).abs()).fold(0.0, f64::max);

    let contraction = |t: &[f64]| -> odcal_core::Result<ControlFlow<Vec<f64>, Vec<f64>>> {
        Ok(ControlFlow::Continue(t.iter().zip(&nu).map(|(x, v)| 0.9 * x + 0.1 * v).collect()))
    };
    let start: Vec<f64> = nu.iter().map(|v| 3.0 * v).collect();
    let cfg = FixedPointConfig { max_evals: 5000, tolerance: 1e-6, ..Default::default() };
    let acc = steffensen(&start, &nu, &cfg, contraction).unwrap();
    let plain = iterate(&start, &nu, &cfg, contraction).unwrap();
    let acc_err = *acc.errors.last().unwrap();
    let plain_err = *plain.errors.last().unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = exact_err <= 1e-10
        && step_err <= 1e-10
        && acc_err < 1e-6
        && plain_err < 1e-6
        && acc.evaluations() < plain.evaluations()
        && elapsed < 1.0;
    check(
        ok,
        format!(
            "affine one-step error {exact_err:.2e}; contraction: steffensen {} evals (eps {acc_err:.1e}) vs plain {} evals (eps {plain_err:.1e}), {elapsed:.3} s",
            acc.evaluations(),
            plain.evaluations()
        ),
    )
}

/// Nested-grid search over the box, shrinking around the best grid point.
fn grid_minimize(a: &[Vec<f64>], c: &[f64], seed: &[f64], lambda: f64, lo: &[f64], hi: &[f64]) -> f64 {
    let n = seed.len();
    let f = |x: &[f64]| -> f64 {
        let mut s = 0.0;
        for (row, ci) in a.iter().zip(c) {
            let r: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - ci;
            s += r * r;
        }
        for j in 0..n {
            s += (lambda * (x[j] - seed[j])).powi(2);
        }
        s
    };
    const POINTS: usize = 7;
    let mut center: Vec<f64> = (0..n).map(|j| 0.5 * (lo[j] + hi[j])).collect();
    let mut half: Vec<f64> = (0..n).map(|j| 0.5 * (hi[j] - lo[j])).collect();
    let mut best = f(&center);
    let mut x = vec![0.0; n];
    for _ in 0..60 {
        let mut best_x = center.clone();
        let total = POINTS.pow(n as u32);
        for mut idx in 0..total {
            for j in 0..n {
                let i = idx % POINTS;
                idx /= POINTS;
                let t = 2.0 * i as f64 / (POINTS - 1) as f64 - 1.0;
                x[j] = (center[j] + t * half[j]).clamp(lo[j], hi[j]);
            }
            let v = f(&x);
            if v < best {
                best = v;
                best_x.copy_from_slice(&x);
            }
        }
        center = best_x;
        half.iter_mut().for_each(|h| *h *= 0.5);
    }
    best.sqrt()
}

fn bvls_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let rows = rng.random_range(1..=5);
        let a: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..n).map(|_| if rng.random_bool(0.7) { rng.random_range(0.0..1.0) } else { 0.0 }).collect())
            .collect();
        let c: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..100.0)).collect();
        let seed: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let lambda = rng.random_range(0.1..3.0);
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|&l| l + rng.random_range(0.0..80.0)).collect();
        let sys = StackedSystem::from_dense(&a, c.clone(), seed.clone(), lambda, lo.clone(), hi.clone()).unwrap();
        let sol = solve(&sys, 1e-11, 50 * n + 100);
        let oracle = grid_minimize(&a, &c, &seed, lambda, &lo, &hi);
        let gap = (sol.objective - oracle).abs();
        let kkt = sys.kkt_violation(&sol.x);
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt);
        if gap > 1e-4 || !sys.kkt_holds(&sol.x, 1e-8) {
            failures += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    check(
        failures == 0 && elapsed < 30.0,
        format!(
            "{failures}/100 mismatches, worst objective gap {worst_gap:.2e}, worst KKT violation {worst_kkt:.2e}, {elapsed:.1} s"
        ),
    )
}

fn assignment_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let num_sensors = rng.random_range(1..=4);
        let num_od = rng.random_range(1..=4);
        let delta = 3600.0;
        let gamma = -rng.random_range(0.001..0.1);
        let costs: Vec<Vec<RouteCosts>> = (0..num_od)
            .map(|_| {
                (0..rng.random_range(1..=5))
                    .map(|_| {
                        let theta = rng.random_range(30.0..4000.0);
                        let mut sensor_times = Vec::new();
                        for k in 0..num_sensors {
                            if rng.random_bool(0.5) {
                                sensor_times.push((k, rng.random_range(0.0..theta)));
                            }
                        }
                        RouteCosts { theta, sensor_times }
                    })
                    .collect()
            })
            .collect();
        let a = build_assignment(&costs, num_sensors, gamma, delta).unwrap();
        for (m, routes) in costs.iter().enumerate() {
            let weights: Vec<f64> = routes.iter().map(|r| (gamma * r.theta).exp()).collect();
            let total: f64 = weights.iter().sum();
            for k in 0..num_sensors {
                let mut alpha = 0.0;
                for (r, w) in routes.iter().zip(&weights) {
                    for &(s, t) in &r.sensor_times {
                        if s == k && t < delta {
                            alpha += (delta - t) / delta * (w / total);
                        }
                    }
                }
                worst = worst.max((a.alpha(m, k) - alpha).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("200 random route sets, worst |alpha - enumeration| = {worst:.2e}"))
}

fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let spec = GridSpec::new(rng.random_range(2..=3), rng.random_range(2..=3), 100.0);
    let mut file = generate_grid(&spec).unwrap().to_file();
    for link in &mut file.links {
        link.length = rng.random_range(20.0..300.0);
        link.lanes = rng.random_range(1..=2);
        link.speed_limit = rng.random_range(5.0..20.0);
    }
    for node in &mut file.nodes {
        node.signalized = rng.random_bool(0.5);
        node.signal_spec = node
            .signalized
            .then(|| SignalSpec::two_phase(rng.random_range(20.0..90.0), rng.random_range(0.3..0.7)));
    }
    Network::new(file).unwrap()
}

fn normalized(mut state: FrameState) -> FrameState {
    state.tau.clear();
    for ls in &mut state.links {
        for v in ls.queue.iter_mut().chain(ls.waiting.iter_mut()) {
            v.frames_carried = 0;
        }
    }
    state
}

fn simulator_handoff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut failures = Vec::new();
    let mut carried = 0;
    for case in 0..1000 {
        let net = random_network(&mut rng);
        let routes = candidate_routes(&net, &free_flow_times(&net), 3);
        let delta: u32 = rng.random_range(30..400);
        let cfg = SimConfig {
            saturation_flow: rng.random_range(0.05..1.0),
            record_trace: true,
            ..SimConfig::default()
        };
        let plans: Vec<VehiclePlan> = (0..rng.random_range(0..150))
            .map(|_| {
                let od = rng.random_range(0..net.num_od_pairs());
                let route = rng.random_range(0..routes[od].len());
                VehiclePlan { od, route, links: Arc::clone(&routes[od][route]), departure: rng.random_range(0..2 * delta) }
            })
            .collect();
        let (early, late): (Vec<VehiclePlan>, Vec<VehiclePlan>) = plans.iter().cloned().partition(|p| p.departure < delta);
        let late: Vec<VehiclePlan> = late.into_iter().map(|p| VehiclePlan { departure: p.departure - delta, ..p }).collect();

        let whole = simulate_frame(&net, &plans, &FrameState::empty(&net), &cfg, 2 * delta).unwrap();
        let first = simulate_frame(&net, &early, &FrameState::empty(&net), &cfg, delta).unwrap();
        let mut buf = Vec::new();
        save_state(&first).write_json(&mut buf).unwrap();
        let loaded = FrameState::read_json(buf.as_slice()).unwrap();
        let second = simulate_frame(&net, &late, &loaded, &cfg, delta).unwrap();
        carried += first.carryover();

        let conserved = plans.len() == whole.completed + whole.carryover()
            && early.len() == first.completed + first.carryover()
            && late.len() + first.carryover() == second.completed + second.carryover();
        let mut trace = first.trace.clone();
        trace.extend(second.trace.iter().copied());
        let mut durations = first.trip_durations.clone();
        durations.extend(&second.trip_durations);
        let counts: Vec<u64> = first.counts.iter().zip(&second.counts).map(|(a, b)| a + b).collect();
        let same = trace == whole.trace
            && durations == whole.trip_durations
            && counts == whole.counts
            && normalized(second.state.clone()) == normalized(whole.state.clone());
        if !(conserved && same) {
            failures.push(case);
        }
    }
    check(
        failures.is_empty(),
        format!(
            "1000 scenarios, {carried} vehicles carried across the split, failing cases {:?}",
            &failures[..failures.len().min(10)]
        ),
    )
}

fn sampler_unbiased() -> Outcome {
    let (expected, delta) = (180.0, 3600u32);
    let flow = RouteFlow { od: 0, route: 0, links: Arc::from(vec![0usize]), expected_trips: expected };
    let reps = 1000;
    let totals: Vec<f64> = (0..reps)
        .map(|r| sample_plans(std::slice::from_ref(&flow), delta, replicate_seed(99, r)).unwrap().len() as f64)
        .collect();
    let m = mean(&totals);
    let p = expected / f64::from(delta);
    let sd = (f64::from(delta) * p * (1.0 - p)).sqrt();
    let se = sd / (reps as f64).sqrt();
    check(
        (m - expected).abs() <= 3.0 * se,
        format!("mean {m:.3} over {reps} replicates, |mean - 180| = {:.3}, 3 standard errors = {:.3}", (m - expected).abs(), 3.0 * se),
    )
}

fn diagnostics_correlation() -> Outcome {
    let mut grid = GridSpec::new(6, 6, 200.0).poi(PoiSelector::RingPattern);
    grid.lanes = 2;
    let spec = ScenarioSpec::new(grid, DemandProtocol::Rate { lo: 0.0, hi: 15.0 }, 3600, 3600, 7);
    let sc = build_scenario(&spec).unwrap();
    let truth = simulate_frames(&sc.net, &sc.plans, 3600, 1, &spec.sim).unwrap();
    let cfg = CalibConfig {
        gamma: spec.gamma,
        rho: 10,
        replicates: 8,
        max_iterations: 60,
        epsilon_exit: 0.0,
        ..Default::default()
    };
    let out = run_sequence(&sc.net, &sc.nod, [truth[0].counts_f64()], &cfg).unwrap();
    let records = &out[0].records;
    let c = correlation_matrix(records);
    let (iter_od, speed_c2s) = (c[2][0], c[4][1]);
    let ok = records.len() >= 50 && iter_od.is_some_and(|v| v > 0.5) && speed_c2s.is_some_and(|v| v < 0.0);
    check(
        ok,
        format!(
            "{} iterations, corr(iter_err, od_cal_err) = {} (need > 0.5), corr(mean_speed, cal_to_sim_err) = {} (need < 0)",
            records.len(),
            iter_od.map_or("undefined".into(), |v| format!("{v:.3}")),
            speed_c2s.map_or("undefined".into(), |v| format!("{v:.3}"))
        ),
    )
}

fn main() {
    let cell = std::cell::OnceCell::new();
    let small = || cell.get_or_init(small_grid);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("closed-loop 4x4 grid reproduction", Box::new(|| closed_loop(small()))),
        ("lambda sensitivity direction", Box::new(|| lambda_direction(small()))),
        ("steffensen exactness and acceleration", Box::new(steffensen_acceleration)),
        ("bvls brute-force equivalence", Box::new(bvls_oracle)),
        ("assignment matrix enumeration", Box::new(assignment_enumeration)),
        ("simulator conservation and handoff", Box::new(simulator_handoff)),
        ("sampler unbiasedness", Box::new(sampler_unbiased)),
        ("error diagnostics correlation signs", Box::new(diagnostics_correlation)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
