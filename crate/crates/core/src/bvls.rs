//! Bounded-variable least squares for the OD calibration step.
//!
//! The problem is
//!
//! ```text
//! min_{l <= x <= u} || [A; lambda I] x - [c; lambda x_seed] ||_2
//! ```
//!
//! where `A` (q x n) maps OD demand to expected sensor counts. The solver is
//! an active-set method in the Stark-Parker style: variables are partitioned
//! into a free set and the two bound sets, the unconstrained problem is solved
//! on the free set, infeasible steps are cut back to the nearest bound, and
//! bound variables with a descent direction pointing into the box are freed one
//! at a time until the KKT conditions hold.
//!
//! The `lambda I` block is never formed. Free-set solves use the normal
//! equations `(A_F^T A_F + lambda^2 I) z = rhs`, either directly (small free
//! set) or through the Woodbury identity on a `q x q` system when the free set
//! is larger than the number of sensors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::assignment::AssignmentMatrix;
use crate::error::{Error, Result};

/// Upper bounds are `u_factor * max(seed, u_floor)`, lower bounds are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRule {
    pub u_factor: f64,
    pub u_floor: f64,
}

impl Default for BoundRule {
    fn default() -> Self {
        BoundRule {
            u_factor: 10.0,
            u_floor: 1.0,
        }
    }
}

impl BoundRule {
    pub fn bounds(&self, seed: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lower = vec![0.0; seed.len()];
        let upper = seed
            .iter()
            .map(|&s| self.u_factor * s.max(self.u_floor))
            .collect();
        (lower, upper)
    }
}

/// The stacked system `A' = [A; lambda I]`, `b = [c; lambda x_seed]` with box bounds.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    num_rows: usize,
    /// Column `j` of `A` as `(row, value)` pairs.
    cols: Vec<Vec<(usize, f64)>>,
    counts: Vec<f64>,
    seed: Vec<f64>,
    lambda: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StackedSystem {
    pub fn new(
        num_rows: usize,
        cols: Vec<Vec<(usize, f64)>>,
        counts: Vec<f64>,
        seed: Vec<f64>,
        lambda: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let n = cols.len();
        if counts.len() != num_rows || seed.len() != n || lower.len() != n || upper.len() != n {
            return Err(Error::Dimension(format!(
                "stacked system with {num_rows} rows and {n} columns got counts {}, seed {}, bounds {}/{}",
                counts.len(),
                seed.len(),
                lower.len(),
                upper.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if cols.iter().flatten().any(|&(r, v)| r >= num_rows || !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix entry out of range".into()));
        }
        for j in 0..n {
            if !(lower[j] >= 0.0 && lower[j] <= upper[j]) {
                return Err(Error::InvalidArgument(format!(
                    "bounds of variable {j} violate 0 <= l <= u: [{}, {}]",
                    lower[j], upper[j]
                )));
            }
        }
        Ok(StackedSystem {
            num_rows,
            cols,
            counts,
            seed,
            lambda,
            lower,
            upper,
        })
    }

    pub fn from_assignment(
        a: &AssignmentMatrix,
        counts: &[f64],
        seed: &[f64],
        lambda: f64,
        rule: BoundRule,
    ) -> Result<Self> {
        let (lower, upper) = rule.bounds(seed);
        Self::new(
            a.num_sensors(),
            a.rows().to_vec(),
            counts.to_vec(),
            seed.to_vec(),
            lambda,
            lower,
            upper,
        )
    }

    /// Builds from a dense row-major `A`; zeros are dropped.
    pub fn from_dense(
        a: &[Vec<f64>],
        counts: Vec<f64>,
        seed: Vec<f64>,
        lambda: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let n = seed.len();
        let mut cols = vec![Vec::new(); n];
        for (r, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("row {r} has {} entries, expected {n}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols[j].push((r, v));
                }
            }
        }
        Self::new(a.len(), cols, counts, seed, lambda, lower, upper)
    }

    pub fn num_vars(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> &[f64] {
        &self.seed
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }

    /// `A x - c`.
    fn count_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.counts.iter().map(|&c| -c).collect();
        for (col, &xj) in self.cols.iter().zip(x) {
            if xj != 0.0 {
                for &(i, v) in col {
                    r[i] += v * xj;
                }
            }
        }
        r
    }

    /// `|| A' x - b ||_2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let count: f64 = self.count_residual(x).iter().map(|r| r * r).sum();
        let prior: f64 = x
            .iter()
            .zip(&self.seed)
            .map(|(&xj, &sj)| (self.lambda * (xj - sj)).powi(2))
            .sum();
        (count + prior).sqrt()
    }

    /// `A'^T (A' x - b)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.count_residual(x);
        let l2 = self.lambda * self.lambda;
        self.cols
            .iter()
            .zip(x.iter().zip(&self.seed))
            .map(|(col, (&xj, &sj))| {
                col.iter().map(|&(i, v)| v * r[i]).sum::<f64>() + l2 * (xj - sj)
            })
            .collect()
    }

    /// Largest KKT violation of a feasible point (infinite if infeasible).
    ///
    /// Free components need `|g| = 0`, components at the lower bound need
    /// `g >= 0`, components at the upper bound need `g <= 0`.
    pub fn kkt_violation(&self, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        let mut worst: f64 = 0.0;
        for j in 0..x.len() {
            let (l, u) = (self.lower[j], self.upper[j]);
            if x[j] < l || x[j] > u || !x[j].is_finite() {
                return f64::INFINITY;
            }
            let v = if l == u {
                0.0
            } else if x[j] == l {
                (-g[j]).max(0.0)
            } else if x[j] == u {
                g[j].max(0.0)
            } else {
                g[j].abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn kkt_holds(&self, x: &[f64], tol: f64) -> bool {
        self.kkt_violation(x) <= tol
    }

    /// Writes `A'` and `b` in MatrixMarket coordinate format, followed by the bounds.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.num_vars();
        let nnz: usize = self.cols.iter().map(Vec::len).sum::<usize>() + n;
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "% stacked calibration system, lambda = {}", self.lambda)?;
        writeln!(w, "{} {} {}", self.num_rows + n, n, nnz)?;
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        for j in 0..n {
            writeln!(w, "{} {} {:e}", self.num_rows + j + 1, j + 1, self.lambda)?;
        }
        writeln!(w, "% rhs")?;
        for c in &self.counts {
            writeln!(w, "{c:e}")?;
        }
        for s in &self.seed {
            writeln!(w, "{:e}", self.lambda * s)?;
        }
        writeln!(w, "% bounds")?;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            writeln!(w, "{l:e} {u:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvlsSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// False when `max_iter` ran out before the KKT test passed.
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
}

/// Solves the stacked system from the feasible start `clamp(seed)`.
///
/// `tol` bounds the gradient on bound variables: a variable at a bound stays
/// there while its descent direction points out of the box by more than `-tol`.
pub fn solve(sys: &StackedSystem, tol: f64, max_iter: usize) -> BvlsSolution {
    let n = sys.num_vars();
    let mut x = sys.clamp(&sys.seed);
    let mut status: Vec<Status> = (0..n)
        .map(|j| {
            let (l, u) = (sys.lower[j], sys.upper[j]);
            if x[j] <= l {
                Status::Lower
            } else if x[j] >= u {
                Status::Upper
            } else {
                Status::Free
            }
        })
        .collect();

    let mut iterations = 0;
    let mut blocked = vec![false; n];
    let mut just_freed: Option<usize> = None;

    loop {
        // Minimize over the current free set, cutting back to bounds as needed.
        loop {
            let free: Vec<usize> = (0..n).filter(|&j| status[j] == Status::Free).collect();
            if free.is_empty() {
                break;
            }
            iterations += 1;
            if iterations > max_iter {
                return finish(sys, x, false, iterations - 1);
            }
            let z = solve_free(sys, &free, &x, &status);

            if let Some(t) = just_freed.take() {
                let pos = free.binary_search(&t).expect("freed variable is free");
                let zt = z[pos];
                if zt < sys.lower[t] && x[t] == sys.lower[t] || zt > sys.upper[t] && x[t] == sys.upper[t] {
                    // Round-off pushed the new variable straight back out.
                    status[t] = if x[t] == sys.lower[t] { Status::Lower } else { Status::Upper };
                    blocked[t] = true;
                    break;
                }
            }

            let mut alpha = 1.0;
            let mut hit = None;
            for (pos, &j) in free.iter().enumerate() {
                let (zj, xj) = (z[pos], x[j]);
                let ratio = if zj < sys.lower[j] {
                    (sys.lower[j] - xj) / (zj - xj)
                } else if zj > sys.upper[j] {
                    (sys.upper[j] - xj) / (zj - xj)
                } else {
                    continue;
                };
                let ratio = if ratio.is_finite() { ratio.clamp(0.0, 1.0) } else { 0.0 };
                if ratio < alpha || hit.is_none() {
                    alpha = ratio.min(alpha);
                    hit = Some(j);
                }
            }
            match hit {
                None => {
                    for (pos, &j) in free.iter().enumerate() {
                        x[j] = z[pos];
                    }
                    blocked.iter_mut().for_each(|b| *b = false);
                    break;
                }
                Some(first) => {
                    for (pos, &j) in free.iter().enumerate() {
                        x[j] += alpha * (z[pos] - x[j]);
                        let at_lower = x[j] <= sys.lower[j]
                            || (z[pos] < sys.lower[j] && x[j] - sys.lower[j] <= 1e-12 * (1.0 + sys.lower[j].abs()));
                        let at_upper = x[j] >= sys.upper[j]
                            || (z[pos] > sys.upper[j] && sys.upper[j] - x[j] <= 1e-12 * (1.0 + sys.upper[j].abs()));
                        if at_lower || (j == first && z[pos] < sys.lower[j]) {
                            x[j] = sys.lower[j];
                            status[j] = Status::Lower;
                        } else if at_upper || (j == first && z[pos] > sys.upper[j]) {
                            x[j] = sys.upper[j];
                            status[j] = Status::Upper;
                        }
                    }
                }
            }
        }

        // Pick the bound variable whose gradient most strongly points inward.
        let g = sys.gradient(&x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if blocked[j] || sys.lower[j] == sys.upper[j] {
                continue;
            }
            let v = match status[j] {
                Status::Free => continue,
                Status::Lower => -g[j],
                Status::Upper => g[j],
            };
            if v > tol && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            None => {
                let converged = sys.kkt_violation(&x) <= tol.max(free_gradient_floor(sys, &x));
                return finish(sys, x, converged, iterations);
            }
            Some((j, _)) => {
                status[j] = Status::Free;
                just_freed = Some(j);
            }
        }
    }
}

// Free components are solved exactly up to round-off; scale the acceptance of
// their residual gradient with the problem size.
fn free_gradient_floor(sys: &StackedSystem, x: &[f64]) -> f64 {
    let scale = sys
        .counts
        .iter()
        .chain(x)
        .fold(1.0f64, |m, &v| m.max(v.abs()));
    1e-9 * scale * (1.0 + sys.lambda * sys.lambda)
}

fn finish(sys: &StackedSystem, x: Vec<f64>, converged: bool, iterations: usize) -> BvlsSolution {
    BvlsSolution {
        objective: sys.objective(&x),
        x,
        converged,
        iterations,
    }
}

/// Minimizes over the free variables with all others held at their bounds.
fn solve_free(sys: &StackedSystem, free: &[usize], x: &[f64], status: &[Status]) -> Vec<f64> {
    let q = sys.num_rows;
    let l2 = sys.lambda * sys.lambda;

    // Count residual left for the free columns: c - A_B x_B.
    let mut r = sys.counts.clone();
    for (j, col) in sys.cols.iter().enumerate() {
        if status[j] != Status::Free && x[j] != 0.0 {
            for &(i, v) in col {
                r[i] -= v * x[j];
            }
        }
    }
    let rhs: Vec<f64> = free
        .iter()
        .map(|&j| sys.cols[j].iter().map(|&(i, v)| v * r[i]).sum::<f64>() + l2 * sys.seed[j])
        .collect();

    if free.len() <= q {
        let f = free.len();
        let mut h = DMatrix::<f64>::zeros(f, f);
        let mut dense = vec![0.0; q];
        for a in 0..f {
            for &(i, v) in &sys.cols[free[a]] {
                dense[i] = v;
            }
            for b in a..f {
                let dot: f64 = sys.cols[free[b]].iter().map(|&(i, v)| v * dense[i]).sum();
                h[(a, b)] = dot;
                h[(b, a)] = dot;
            }
            for &(i, _) in &sys.cols[free[a]] {
                dense[i] = 0.0;
            }
            h[(a, a)] += l2;
        }
        spd_solve(h, DVector::from_vec(rhs)).data.into()
    } else {
        // (A^T A + l2 I)^-1 g = (g - A^T (l2 I + A A^T)^-1 A g) / l2
        let mut m = DMatrix::<f64>::zeros(q, q);
        let mut ag = vec![0.0; q];
        for (pos, &j) in free.iter().enumerate() {
            let col = &sys.cols[j];
            for &(i, vi) in col {
                ag[i] += vi * rhs[pos];
                for &(k, vk) in col {
                    m[(i, k)] += vi * vk;
                }
            }
        }
        for i in 0..q {
            m[(i, i)] += l2;
        }
        let y = spd_solve(m, DVector::from_vec(ag));
        free.iter()
            .enumerate()
            .map(|(pos, &j)| {
                let aty: f64 = sys.cols[j].iter().map(|&(i, v)| v * y[i]).sum();
                (rhs[pos] - aty) / l2
            })
            .collect()
    }
}

fn spd_solve(m: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        // lambda > 0 keeps the system positive definite; fall back to LU if
        // round-off says otherwise.
        None => m.lu().solve(&b).unwrap_or_else(|| DVector::zeros(b.len())),
    }
}
