//! Fixed-point iteration on link travel times with Steffensen acceleration.
//!
//! Travel times are always kept inside `[nu, d * nu]`. One outer Steffensen
//! iteration costs two map evaluations and extrapolates componentwise with
//! Aitken's delta-squared formula.

use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::metrics::epsilon;

/// Below this magnitude the Aitken denominator is treated as zero.
pub const AITKEN_GUARD: f64 = 1e-9;

pub fn clamp_map(tau: &[f64], nu: &[f64], factor: f64) -> Vec<f64> {
    tau.iter()
        .zip(nu)
        .map(|(&t, &n)| if t.is_nan() { n } else { t.clamp(n, factor * n) })
        .collect()
}

/// `tau0 - (tau1 - tau0)^2 / (tau2 - 2 tau1 + tau0)` per link, falling back to
/// `tau1` where the denominator vanishes, then clamped.
pub fn steffensen_step(tau0: &[f64], tau1: &[f64], tau2: &[f64], nu: &[f64], factor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..tau0.len())
        .map(|l| {
            let d1 = tau1[l] - tau0[l];
            let denom = tau2[l] - 2.0 * tau1[l] + tau0[l];
            if denom.abs() < AITKEN_GUARD {
                tau1[l]
            } else {
                tau0[l] - d1 * d1 / denom
            }
        })
        .collect();
    clamp_map(&raw, nu, factor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    /// Upper clamp as a multiple of free-flow time.
    pub clamp_factor: f64,
    /// Total map evaluations allowed.
    pub max_evals: usize,
    /// Stop once an evaluation's fixed-point error drops below this (percent).
    pub tolerance: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            clamp_factor: 5.0,
            max_evals: 40,
            tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRun {
    /// Output of the evaluation with the smallest fixed-point error.
    pub tau_star: Vec<f64>,
    pub best_eval: usize,
    /// Input of every evaluation, in order.
    pub inputs: Vec<Vec<f64>>,
    /// `epsilon(input, output)` per evaluation.
    pub errors: Vec<f64>,
    /// Running minimum of `errors`.
    pub min_errors: Vec<f64>,
}

impl FixedPointRun {
    pub fn evaluations(&self) -> usize {
        self.errors.len()
    }
}

struct Tracker {
    run: FixedPointRun,
    best: f64,
}

impl Tracker {
    fn record(&mut self, input: &[f64], output: &[f64]) -> f64 {
        let err = epsilon(input, output);
        if self.run.errors.is_empty() || err < self.best {
            self.best = err;
            self.run.best_eval = self.run.errors.len();
            self.run.tau_star = output.to_vec();
        }
        self.run.inputs.push(input.to_vec());
        self.run.errors.push(err);
        self.run.min_errors.push(self.best);
        err
    }
}

/// Evaluates `map` once and reports whether the run should stop.
fn eval<E, F>(
    map: &mut F,
    input: &[f64],
    nu: &[f64],
    cfg: &FixedPointConfig,
    tracker: &mut Tracker,
) -> std::result::Result<(Vec<f64>, bool), E>
where
    F: FnMut(&[f64]) -> std::result::Result<ControlFlow<Vec<f64>, Vec<f64>>, E>,
{
    let (out, halt) = match map(input)? {
        ControlFlow::Continue(t) => (t, false),
        ControlFlow::Break(t) => (t, true),
    };
    let out = clamp_map(&out, nu, cfg.clamp_factor);
    let err = tracker.record(input, &out);
    let stop = halt || err < cfg.tolerance || tracker.run.errors.len() >= cfg.max_evals;
    Ok((out, stop))
}

fn check(tau0: &[f64], nu: &[f64], cfg: &FixedPointConfig) -> Result<()> {
    if tau0.len() != nu.len() {
        return Err(Error::Dimension(format!("{} travel times for {} links", tau0.len(), nu.len())));
    }
    if cfg.max_evals == 0 || !(cfg.clamp_factor >= 1.0) {
        return Err(Error::InvalidArgument("need at least one evaluation and clamp factor >= 1".into()));
    }
    if nu.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::InvalidArgument("free-flow times must be positive".into()));
    }
    Ok(())
}

fn new_tracker(n: usize) -> Tracker {
    Tracker {
        run: FixedPointRun {
            tau_star: vec![0.0; n],
            best_eval: 0,
            inputs: Vec::new(),
            errors: Vec::new(),
            min_errors: Vec::new(),
        },
        best: f64::INFINITY,
    }
}

/// Steffensen-accelerated fixed-point search for `tau = map(tau)`.
///
/// The map may return `ControlFlow::Break` to end the run after that
/// evaluation. Outputs are clamped before use.
pub fn steffensen<E, F>(
    tau0: &[f64],
    nu: &[f64],
    cfg: &FixedPointConfig,
    mut map: F,
) -> std::result::Result<FixedPointRun, E>
where
    E: From<Error>,
    F: FnMut(&[f64]) -> std::result::Result<ControlFlow<Vec<f64>, Vec<f64>>, E>,
{
    check(tau0, nu, cfg)?;
    let mut tracker = new_tracker(tau0.len());
    let mut t0 = clamp_map(tau0, nu, cfg.clamp_factor);
    loop {
        let (t1, stop) = eval(&mut map, &t0, nu, cfg, &mut tracker)?;
        if stop {
            break;
        }
        let (t2, stop) = eval(&mut map, &t1, nu, cfg, &mut tracker)?;
        if stop {
            break;
        }
        t0 = steffensen_step(&t0, &t1, &t2, nu, cfg.clamp_factor);
    }
    Ok(tracker.run)
}

/// Plain successive substitution `tau <- clamp(map(tau))`.
pub fn iterate<E, F>(
    tau0: &[f64],
    nu: &[f64],
    cfg: &FixedPointConfig,
    mut map: F,
) -> std::result::Result<FixedPointRun, E>
where
    E: From<Error>,
    F: FnMut(&[f64]) -> std::result::Result<ControlFlow<Vec<f64>, Vec<f64>>, E>,
{
    check(tau0, nu, cfg)?;
    let mut tracker = new_tracker(tau0.len());
    let mut t = clamp_map(tau0, nu, cfg.clamp_factor);
    loop {
        let (next, stop) = eval(&mut map, &t, nu, cfg, &mut tracker)?;
        if stop {
            break;
        }
        t = next;
    }
    Ok(tracker.run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(a: f64, b: f64) -> impl FnMut(&[f64]) -> Result<ControlFlow<Vec<f64>, Vec<f64>>> {
        move |t: &[f64]| Ok(ControlFlow::Continue(t.iter().map(|x| a * x + b).collect()))
    }

    #[test]
    fn clamp_examples() {
        let nu = [10.0, 10.0, 10.0];
        assert_eq!(clamp_map(&[5.0, 30.0, 80.0], &nu, 5.0), vec![10.0, 30.0, 50.0]);
    }

    #[test]
    fn aitken_example() {
        let nu = [1.0];
        let t = steffensen_step(&[10.0], &[6.0], &[4.0], &nu, 5.0);
        assert!((t[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator_falls_back() {
        let nu = [1.0];
        assert_eq!(steffensen_step(&[2.0], &[3.0], &[4.0], &nu, 5.0), vec![3.0]);
        assert_eq!(steffensen_step(&[3.0], &[3.0], &[3.0], &nu, 5.0), vec![3.0]);
    }

    #[test]
    fn affine_fixed_point_in_one_outer_iteration() {
        let nu = [1.0];
        let cfg = FixedPointConfig { max_evals: 3, ..Default::default() };
        // Fixed point 2 / (1 - 0.5) = 4.
        let run = steffensen(&[2.0], &nu, &cfg, affine(0.5, 2.0)).unwrap();
        assert!((run.inputs[2][0] - 4.0).abs() < 1e-12);
        assert!(run.errors[2] < 1e-9);
        assert_eq!(run.best_eval, 2);
    }

    #[test]
    fn break_stops_after_that_evaluation() {
        let nu = [1.0];
        let mut calls = 0;
        let run = iterate(&[2.0], &nu, &FixedPointConfig::default(), |t: &[f64]| -> Result<_> {
            calls += 1;
            let out = vec![t[0] * 0.9 + 0.2];
            Ok(if calls == 3 { ControlFlow::Break(out) } else { ControlFlow::Continue(out) })
        })
        .unwrap();
        assert_eq!(run.evaluations(), 3);
        assert!(run.min_errors.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn outputs_are_clamped() {
        let nu = [1.0, 2.0];
        let cfg = FixedPointConfig { max_evals: 6, ..Default::default() };
        let run = steffensen(&[1.0, 2.0], &nu, &cfg, affine(3.0, 1.0)).unwrap();
        for t in &run.inputs {
            assert!(t.iter().zip(&nu).all(|(x, n)| *x >= *n && *x <= 5.0 * n));
        }
        assert!(run.tau_star.iter().zip(&nu).all(|(x, n)| *x >= *n && *x <= 5.0 * n));
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = FixedPointConfig::default();
        assert!(steffensen(&[1.0], &[1.0, 2.0], &cfg, affine(0.5, 1.0)).is_err());
        assert!(iterate(&[1.0], &[0.0], &cfg, affine(0.5, 1.0)).is_err());
    }
}
