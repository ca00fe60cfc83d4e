//! Dense bounded-variable revised simplex.
//!
//! Problems are stated as `maximize c^T x + offset` subject to `A x = b` and
//! finite boxes `lower <= x <= upper`. Phase 1 uses one artificial per
//! equality; both phases price with Bland's rule so the returned basic
//! solution is a deterministic function of the problem data.

mod horizon;

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{ensure_contract, Error, Result};

pub use horizon::{build_full_horizon, solve_full_horizon, FullHorizonSolution};

/// Relative primal feasibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Relative reduced-cost tolerance used to certify optimality.
pub const OPTIMALITY_TOL: f64 = 1e-7;

const PRICING_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const RATIO_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Maximized.
    pub objective: Vec<f64>,
    /// Constant added to the objective value; does not affect the argmax.
    pub objective_offset: f64,
    /// `m x n` equality matrix.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        let m = self.eq_rhs.len();
        ensure_contract!(
            self.eq_matrix.nrows() == m && self.eq_matrix.ncols() == n,
            "equality matrix is {}x{}, expected {}x{}",
            self.eq_matrix.nrows(),
            self.eq_matrix.ncols(),
            m,
            n
        );
        ensure_contract!(
            self.lower.len() == n && self.upper.len() == n,
            "bound vectors must have length {n}"
        );
        ensure_contract!(m <= n, "more equalities ({m}) than variables ({n})");
        ensure_contract!(
            self.objective_offset.is_finite()
                && self.objective.iter().all(|v| v.is_finite())
                && self.eq_rhs.iter().all(|v| v.is_finite())
                && self.eq_matrix.iter().all(|v| v.is_finite()),
            "non-finite LP data"
        );
        for j in 0..n {
            ensure_contract!(
                self.lower[j].is_finite() && self.upper[j].is_finite(),
                "variable {j} has an infinite bound"
            );
            ensure_contract!(
                self.lower[j] <= self.upper[j],
                "variable {j} has lower {} > upper {}",
                self.lower[j],
                self.upper[j]
            );
        }
        Ok(())
    }

    /// Writes a plain-text fixed-layout dump, one section per block.
    pub fn write_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.debug_string().as_bytes())
    }

    pub fn debug_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "LP {} rows {} cols", self.n_rows(), self.n_vars());
        let _ = writeln!(s, "OFFSET {:.17e}", self.objective_offset);
        let _ = writeln!(s, "COLUMNS");
        for j in 0..self.n_vars() {
            let _ = writeln!(
                s,
                "{:>6} {:>24.16e} {:>24.16e} {:>24.16e}",
                j, self.objective[j], self.lower[j], self.upper[j]
            );
        }
        let _ = writeln!(s, "ROWS");
        for i in 0..self.n_rows() {
            let _ = write!(s, "{:>6} {:>24.16e} |", i, self.eq_rhs[i]);
            for j in 0..self.n_vars() {
                let v = self.eq_matrix[(i, j)];
                if v != 0.0 {
                    let _ = write!(s, " {j}:{v:.16e}");
                }
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Incremental construction of an [`LpProblem`] from sparse rows.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    offset: f64,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its column index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((coeffs, rhs));
    }

    pub fn add_offset(&mut self, v: f64) {
        self.offset += v;
    }

    pub fn build(self) -> LpProblem {
        let n = self.objective.len();
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, n);
        let mut rhs = Vec::with_capacity(m);
        for (i, (coeffs, b)) in self.rows.into_iter().enumerate() {
            for (j, v) in coeffs {
                a[(i, j)] += v;
            }
            rhs.push(b);
        }
        LpProblem {
            objective: self.objective,
            objective_offset: self.offset,
            eq_matrix: a,
            eq_rhs: rhs,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// `c^T x + offset`.
    pub value: f64,
    pub iterations: usize,
    /// Row multipliers of the final basis (`c_B^T B^{-1}`); the sensitivity of
    /// the optimal value to each right-hand side.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    Simplex::new(p).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    p: &'a LpProblem,
    m: usize,
    n: usize,
    /// Nonzeros of each structural column.
    cols: Vec<Vec<(usize, f64)>>,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Row of the basis holding each variable, `usize::MAX` if nonbasic.
    pos: Vec<usize>,
    /// Row-major `m x m` basis inverse.
    binv: Vec<f64>,
    since_refactor: usize,
    refactor_every: usize,
    iterations: usize,
    max_iterations: usize,
    scratch_col: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProblem) -> Self {
        let m = p.n_rows();
        let n = p.n_vars();
        let cols = (0..n)
            .map(|j| {
                p.eq_matrix
                    .column(j)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .collect()
            })
            .collect();
        let ntot = n + m;
        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut x = lower.clone();
        x.truncate(n);
        x.extend(std::iter::repeat_n(0.0, m));

        let mut s = Simplex {
            p,
            m,
            n,
            cols,
            art_sign: vec![1.0; m],
            lower,
            upper,
            cost: vec![0.0; ntot],
            x,
            basis: (n..ntot).collect(),
            pos: vec![usize::MAX; ntot],
            binv: vec![0.0; m * m],
            since_refactor: 0,
            refactor_every: m.max(64),
            iterations: 0,
            max_iterations: 100_000 + 50 * ntot,
            scratch_col: vec![0.0; m],
            y: vec![0.0; m],
        };

        // Crash: a singleton column that can absorb its row's residual within
        // its box replaces that row's artificial.
        let mut resid = s.residual();
        let mut crashed = vec![false; m];
        for j in 0..n {
            let [(i, v)] = s.cols[j][..] else { continue };
            if crashed[i] {
                continue;
            }
            let val = s.x[j] + resid[i] / v;
            if val >= s.lower[j] && val <= s.upper[j] {
                s.x[j] = val;
                resid[i] = 0.0;
                crashed[i] = true;
                s.basis[i] = j;
                s.pos[j] = i;
                s.binv[i * m + i] = 1.0 / v;
            }
        }
        for i in 0..m {
            if crashed[i] {
                continue;
            }
            let sign = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
            s.art_sign[i] = sign;
            s.x[n + i] = resid[i].abs();
            s.pos[n + i] = i;
            s.binv[i * m + i] = sign;
        }
        s
    }

    /// `b - A x` over structural variables.
    fn residual(&self) -> Vec<f64> {
        let mut r = self.p.eq_rhs.clone();
        for j in 0..self.n {
            let xj = self.x[j];
            if xj != 0.0 {
                for &(i, v) in &self.cols[j] {
                    r[i] -= v * xj;
                }
            }
        }
        r
    }

    fn is_basic(&self, j: usize) -> bool {
        self.pos[j] != usize::MAX
    }

    /// Writes `B^{-1} A_j` into `out`.
    fn ftran(&self, j: usize, out: &mut [f64]) {
        let m = self.m;
        if j < self.n {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.binv[i * m..(i + 1) * m];
                *o = self.cols[j].iter().map(|&(k, v)| row[k] * v).sum();
            }
        } else {
            let k = j - self.n;
            let s = self.art_sign[k];
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.binv[i * m + k] * s;
            }
        }
    }

    fn compute_duals(&mut self) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, r) in self.y.iter_mut().zip(row) {
                    *yk += cb * r;
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        if j < self.n {
            self.cost[j]
                - self.cols[j]
                    .iter()
                    .map(|&(i, v)| self.y[i] * v)
                    .sum::<f64>()
        } else {
            let k = j - self.n;
            self.cost[j] - self.y[k] * self.art_sign[k]
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (r, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                for &(i, v) in &self.cols[j] {
                    b[(i, r)] = v;
                }
            } else {
                b[(j - self.n, r)] = self.art_sign[j - self.n];
            }
        }
        let inv = b
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Internal("singular basis during refactorization".into()))?;
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        // Basic values from the nonbasic ones.
        let mut r = self.p.eq_rhs.clone();
        for j in 0..self.n {
            if !self.is_basic(j) && self.x[j] != 0.0 {
                for &(i, v) in &self.cols[j] {
                    r[i] -= v * self.x[j];
                }
            }
        }
        for k in 0..m {
            let j = self.n + k;
            if !self.is_basic(j) && self.x[j] != 0.0 {
                r[k] -= self.art_sign[k] * self.x[j];
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot_binv(&mut self, r: usize, col: &[f64]) {
        let m = self.m;
        let piv = col[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (i, chunk) in before.chunks_exact_mut(m).enumerate() {
            let f = col[i];
            if f != 0.0 {
                chunk.iter_mut().zip(prow.iter()).for_each(|(a, b)| *a -= f * b);
            }
        }
        for (off, chunk) in after.chunks_exact_mut(m).enumerate() {
            let f = col[r + 1 + off];
            if f != 0.0 {
                chunk.iter_mut().zip(prow.iter()).for_each(|(a, b)| *a -= f * b);
            }
        }
    }

    /// Runs one phase to optimality under Bland's rule.
    fn iterate(&mut self, phase: Phase, tol: f64) -> Result<()> {
        let ntot = self.n + self.m;
        let mut col = std::mem::take(&mut self.scratch_col);
        loop {
            if self.iterations >= self.max_iterations {
                self.scratch_col = col;
                return Err(Error::Internal(format!(
                    "simplex iteration limit ({}) reached",
                    self.max_iterations
                )));
            }
            self.compute_duals();

            // Bland: the lowest-index improving variable enters.
            let mut entering = None;
            for j in 0..ntot {
                if self.is_basic(j) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(j);
                if d > tol && self.x[j] < self.upper[j] {
                    entering = Some((j, 1.0));
                    break;
                }
                if d < -tol && self.x[j] > self.lower[j] {
                    entering = Some((j, -1.0));
                    break;
                }
            }
            let Some((q, dir)) = entering else {
                self.scratch_col = col;
                return Ok(());
            };

            self.ftran(q, &mut col);

            // Ratio test; ties broken by lowest variable index.
            let mut best: Option<(f64, usize)> = None;
            for (i, &alpha) in col.iter().enumerate() {
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let bj = self.basis[i];
                let delta = -dir * alpha;
                let theta = if delta < 0.0 {
                    (self.x[bj] - self.lower[bj]) / -delta
                } else if self.upper[bj].is_finite() {
                    (self.upper[bj] - self.x[bj]) / delta
                } else {
                    continue;
                };
                let theta = theta.max(0.0);
                best = match best {
                    None => Some((theta, i)),
                    Some((bt, bi)) => {
                        if theta < bt - RATIO_TIE_TOL
                            || (theta <= bt + RATIO_TIE_TOL && bj < self.basis[bi])
                        {
                            Some((theta.min(bt), i))
                        } else {
                            Some((bt, bi))
                        }
                    }
                };
            }
            let range = self.upper[q] - self.lower[q];
            let flip = match best {
                None => {
                    if !range.is_finite() {
                        self.scratch_col = col;
                        return Err(Error::Internal(format!(
                            "unbounded ray on variable {q} in phase {phase:?}"
                        )));
                    }
                    true
                }
                Some((theta, _)) => range <= theta,
            };
            self.iterations += 1;

            if flip {
                self.x[q] = if dir > 0.0 {
                    self.upper[q]
                } else {
                    self.lower[q]
                };
                for (i, &alpha) in col.iter().enumerate() {
                    if alpha != 0.0 {
                        let bj = self.basis[i];
                        self.x[bj] -= dir * alpha * range;
                    }
                }
                continue;
            }

            let (theta, r) = best.expect("blocking row exists when not flipping");
            for (i, &alpha) in col.iter().enumerate() {
                if alpha != 0.0 {
                    let bj = self.basis[i];
                    self.x[bj] -= dir * alpha * theta;
                }
            }
            self.x[q] += dir * theta;
            let leaving = self.basis[r];
            let went_down = -dir * col[r] < 0.0;
            self.x[leaving] = if went_down {
                self.lower[leaving]
            } else {
                self.upper[leaving]
            };
            self.pos[leaving] = usize::MAX;
            self.basis[r] = q;
            self.pos[q] = r;
            self.pivot_binv(r, &col);
            self.since_refactor += 1;
            if self.since_refactor >= self.refactor_every {
                self.refactor()?;
            }
        }
    }

    fn run(mut self) -> Result<LpSolution> {
        let n = self.n;
        let m = self.m;
        let bnorm = self.p.eq_rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let feas_tol = FEASIBILITY_TOL * (1.0 + bnorm);

        // Phase 1: maximize the negated sum of artificials.
        for k in 0..m {
            self.cost[n + k] = -1.0;
        }
        self.iterate(Phase::One, PRICING_TOL)?;
        self.refactor()?;
        let infeasibility: f64 = (0..m).map(|k| self.x[n + k].max(0.0)).sum();
        if infeasibility > feas_tol {
            return Ok(self.finish(LpStatus::Infeasible));
        }

        // Phase 2: artificials are pinned at zero and can never re-enter.
        for k in 0..m {
            self.cost[n + k] = 0.0;
            self.upper[n + k] = 0.0;
            if !self.is_basic(n + k) {
                self.x[n + k] = 0.0;
            }
        }
        self.cost[..n].copy_from_slice(&self.p.objective);
        let cmax = self.p.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.iterate(Phase::Two, PRICING_TOL * cmax)?;
        self.refactor()?;
        let p = self.p;
        let sol = self.finish(LpStatus::Optimal);
        verify(p, &sol, feas_tol)?;
        Ok(sol)
    }

    fn finish(mut self, status: LpStatus) -> LpSolution {
        let n = self.n;
        self.compute_duals();
        let mut x: Vec<f64> = self.x[..n].to_vec();
        // Snap nonbasic values exactly onto their bounds and clip basic noise.
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = xj.clamp(self.p.lower[j], self.p.upper[j]);
        }
        let reduced_costs = (0..n).map(|j| self.reduced_cost(j)).collect();
        let value = self
            .p
            .objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
            + self.p.objective_offset;
        LpSolution {
            status,
            x,
            value,
            iterations: self.iterations,
            duals: self.y.clone(),
            reduced_costs,
        }
    }
}

fn verify(p: &LpProblem, sol: &LpSolution, feas_tol: f64) -> Result<()> {
    let r = primal_residual(p, &sol.x);
    if r > feas_tol {
        return Err(Error::Internal(format!(
            "equality residual {r:e} exceeds tolerance {feas_tol:e}"
        )));
    }
    Ok(())
}

/// Largest absolute equality residual `|A x - b|`.
pub fn primal_residual(p: &LpProblem, x: &[f64]) -> f64 {
    let ax = &p.eq_matrix * nalgebra::DVector::from_column_slice(x);
    ax.iter()
        .zip(&p.eq_rhs)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
}
