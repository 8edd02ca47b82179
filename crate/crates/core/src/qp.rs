//! Convex quadratic program solver.
//!
//! Solves `minimize 0.5 x'Px + q'x  subject to  l <= Cx <= u` with a
//! first-order operator-splitting (ADMM) iteration:
//!
//! ```text
//! x~ = (P + sigma*I + C'RC)^-1 (sigma*x - q + C'(Rz - y))
//! x+ = a*x~ + (1-a)*x
//! z+ = clamp(a*Cx~ + (1-a)*z + R^-1 y, l, u)
//! y+ = y + R (a*Cx~ + (1-a)*z - z+)
//! ```
//!
//! where `R` is a diagonal per-row penalty (boosted on rows with `l == u`)
//! and `a` is the over-relaxation factor. The linear system matrix is
//! positive definite thanks to the `sigma*I` regularization, factored once
//! per penalty value with an unpivoted LDL^T and reused across iterations.
//! Solutions are reported with respect to the unregularized objective.
//!
//! On convergence an optional polish step re-solves the KKT system of the
//! detected active set directly, which typically drops the residuals from
//! the first-order tolerance to near machine precision. Warm starts are
//! supported for sequences of related problems (branch-and-bound nodes).

use thiserror::Error;

use crate::linalg::{norm_inf, LdlFactor, Matrix, SparseRows};

/// Ridge added to `P` when factorizing; solutions are still reported for
/// the unregularized objective.
const SIGMA: f64 = 1e-8;
/// Penalty multiplier for rows with `l == u`.
const RHO_EQ_BOOST: f64 = 1e3;
/// Residuals are inspected (and the penalty adapted) every this many iterations.
const CHECK_EVERY: usize = 25;
/// Iterations before the infeasibility heuristic may fire.
const INFEAS_MIN_ITER: usize = 500;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not symmetric (max |P - P'| = {asymmetry})")]
    NotSymmetric { asymmetry: f64 },
    #[error("constraint bounds inverted at row {row}: lower {lower} > upper {upper}")]
    InvalidBounds { row: usize, lower: f64, upper: f64 },
    #[error("cost matrix is not positive semidefinite (factorization failed at pivot {pivot})")]
    NotConvex { pivot: usize },
    #[error("non-finite value in problem data: {0}")]
    NonFinite(String),
}

/// `minimize 0.5 x'Px + q'x  s.t.  l <= Cx <= u`. Bounds may be infinite.
#[derive(Debug, Clone)]
pub struct QpProblem {
    p: Matrix,
    q: Vec<f64>,
    c: Matrix,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl QpProblem {
    pub fn new(
        p: Matrix,
        q: Vec<f64>,
        c: Matrix,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        let m = lower.len();
        if p.rows() != n || p.cols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "P is {}x{}, expected {n}x{n}",
                p.rows(),
                p.cols()
            )));
        }
        if c.rows() != m || c.cols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "C is {}x{}, expected {m}x{n}",
                c.rows(),
                c.cols()
            )));
        }
        if upper.len() != m {
            return Err(QpError::DimensionMismatch(format!(
                "bound lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        let asym = p.asymmetry();
        if asym >= 1e-10 {
            return Err(QpError::NotSymmetric { asymmetry: asym });
        }
        if p.data().iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("P".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("q".into()));
        }
        if c.data().iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("C".into()));
        }
        for (row, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(QpError::NonFinite(format!("bounds at row {row}")));
            }
            if lo > hi {
                return Err(QpError::InvalidBounds { row, lower: *lo, upper: *hi });
            }
        }
        Ok(QpProblem { p, q, c, lower, upper })
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.lower.len()
    }

    pub fn p_matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn c_matrix(&self) -> &Matrix {
        &self.c
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Replace the bounds of one constraint row (used for node fixings in
    /// branch-and-bound). Panics on inverted bounds.
    pub fn set_row_bounds(&mut self, row: usize, lower: f64, upper: f64) {
        assert!(lower <= upper, "inverted bounds for row {row}");
        self.lower[row] = lower;
        self.upper[row] = upper;
    }

    /// `0.5 x'Px + q'x`
    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.matvec(x);
        0.5 * crate::linalg::dot(x, &px) + crate::linalg::dot(&self.q, x)
    }

    /// Dump `(P, q, C, l, u)` as CSV blocks for offline inspection.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        let dump_matrix = |out: &mut String, name: &str, m: &Matrix| {
            out.push_str(&format!("# {name} {}x{}\n", m.rows(), m.cols()));
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.12e}")).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        };
        dump_matrix(&mut out, "P", &self.p);
        out.push_str("# q\n");
        out.push_str(&self.q.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
        dump_matrix(&mut out, "C", &self.c);
        out.push_str("# lower\n");
        out.push_str(&self.lower.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(","));
        out.push_str("\n# upper\n");
        out.push_str(&self.upper.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    PrimalInfeasible,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Base ADMM penalty; adapted during the run.
    pub rho: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    /// Re-solve the active-set KKT system after convergence.
    pub polish: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            alpha: 1.6,
            polish: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Dual vector for the constraint rows; positive entries push against
    /// the upper bound, negative against the lower.
    pub y: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
}

/// Solve from a cold start.
pub fn solve_qp(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    solve_qp_warm(problem, settings, &vec![0.0; n], &vec![0.0; m])
}

/// Solve starting from a primal/dual guess (e.g. the parent node's solution
/// in branch-and-bound).
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &SolverSettings,
    x0: &[f64],
    y0: &[f64],
) -> Result<QpSolution, QpError> {
    if x0.len() != problem.num_vars() {
        return Err(QpError::DimensionMismatch(format!(
            "warm-start x has length {}, expected {}",
            x0.len(),
            problem.num_vars()
        )));
    }
    if y0.len() != problem.num_constraints() {
        return Err(QpError::DimensionMismatch(format!(
            "warm-start y has length {}, expected {}",
            y0.len(),
            problem.num_constraints()
        )));
    }
    Workspace::new(problem, settings)?.run(x0, y0)
}

struct Workspace<'a> {
    problem: &'a QpProblem,
    settings: &'a SolverSettings,
    p_sparse: SparseRows,
    c_sparse: SparseRows,
    rho_base: f64,
    rho: Vec<f64>,
    rho_updates: usize,
    factor: LdlFactor,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a QpProblem, settings: &'a SolverSettings) -> Result<Self, QpError> {
        let p_sparse = SparseRows::from_dense(&problem.p);
        let c_sparse = SparseRows::from_dense(&problem.c);
        let rho_base = settings.rho.max(1e-10);
        let rho = row_penalties(problem, rho_base);
        let factor = factor_reduced(problem, &c_sparse, &rho)?;
        Ok(Workspace {
            problem,
            settings,
            p_sparse,
            c_sparse,
            rho_base,
            rho,
            rho_updates: 0,
            factor,
        })
    }

    fn run(&mut self, x0: &[f64], y0: &[f64]) -> Result<QpSolution, QpError> {
        let n = self.problem.num_vars();
        let m = self.problem.num_constraints();
        let s = self.settings;

        let mut x = x0.to_vec();
        let mut y = y0.to_vec();
        let mut z: Vec<f64> = {
            let cx = self.c_sparse.matvec(&x);
            clamp_to_bounds(&cx, self.problem.lower(), self.problem.upper())
        };

        let mut cx = vec![0.0; m];
        let mut rhs = vec![0.0; n];
        let mut ct_term = vec![0.0; n];
        let mut y_snapshot = y.clone();

        let mut status = SolveStatus::MaxIter;
        let mut iterations = s.max_iter;

        // best primal/dual pair seen, ranked by unscaled residuals; polish
        // candidates compete with the plain iterates
        let mut best: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
        let consider =
            |best: &mut Option<(Vec<f64>, Vec<f64>, f64, f64)>, cand: (Vec<f64>, Vec<f64>, f64, f64)| {
                let better = match best {
                    None => true,
                    Some((_, _, rp, rd)) => cand.2.max(cand.3) < rp.max(*rd),
                };
                if better {
                    *best = Some(cand);
                }
            };

        // when the scaled stopping test passes but polish cannot deliver
        // absolute accuracy, iteration continues against plain eps_abs
        let mut absolute_mode = false;
        let mut scaled_met = false;
        let mut polish_attempts = 0usize;

        for iter in 1..=s.max_iter {
            // x~ solve
            let mut w = vec![0.0; m];
            for i in 0..m {
                w[i] = self.rho[i] * z[i] - y[i];
            }
            self.c_sparse.matvec_transpose_into(&w, &mut ct_term);
            for i in 0..n {
                rhs[i] = SIGMA * x[i] - self.problem.q[i] + ct_term[i];
            }
            self.factor.solve_in_place(&mut rhs);
            let x_tilde = &rhs;

            // over-relaxed updates
            let cxt = self.c_sparse.matvec(x_tilde);
            let mut z_next = vec![0.0; m];
            for i in 0..m {
                let v = s.alpha * cxt[i] + (1.0 - s.alpha) * z[i];
                let cand = v + y[i] / self.rho[i];
                z_next[i] = cand.clamp(self.problem.lower[i], self.problem.upper[i]);
                y[i] += self.rho[i] * (v - z_next[i]);
            }
            for i in 0..n {
                x[i] = s.alpha * x_tilde[i] + (1.0 - s.alpha) * x[i];
            }
            z = z_next;

            if iter % CHECK_EVERY == 0 || iter == s.max_iter {
                self.c_sparse.matvec_into(&x, &mut cx);
                let (rp, rd, eps_p, eps_d, scale_p, scale_d) = self.residuals(&x, &y, &z, &cx);
                scaled_met |= rp <= eps_p && rd <= eps_d;
                let (target_p, target_d) =
                    if absolute_mode { (s.eps_abs, s.eps_abs) } else { (eps_p, eps_d) };
                if rp <= target_p && rd <= target_d {
                    iterations = iter;
                    if s.polish && polish_attempts < 2 {
                        polish_attempts += 1;
                        if let Some(polished) = self.polish(&x, &y) {
                            let quality = polished.2.max(polished.3);
                            consider(&mut best, polished);
                            if quality <= s.eps_abs {
                                status = SolveStatus::Optimal;
                                break;
                            }
                        }
                    }
                    if absolute_mode || !s.polish || rp.max(rd) <= s.eps_abs {
                        // either the plain iterate already has absolute
                        // quality or it was the absolute target that fired
                        status = SolveStatus::Optimal;
                        consider(&mut best, (x.clone(), y.clone(), rp, rd));
                        break;
                    }
                    absolute_mode = true;
                }
                if iter >= INFEAS_MIN_ITER && self.primal_infeasible(&y, &y_snapshot) {
                    status = SolveStatus::PrimalInfeasible;
                    iterations = iter;
                    best = Some((x.clone(), y.clone(), rp, rd));
                    break;
                }
                y_snapshot.copy_from_slice(&y);
                self.adapt_rho(rp, rd, scale_p, scale_d)?;
                if iter == s.max_iter {
                    consider(&mut best, (x.clone(), y.clone(), rp, rd));
                }
            }
        }

        // the scaled tolerance contract was met even if the absolute
        // follow-up ran out of budget
        if status == SolveStatus::MaxIter && scaled_met {
            status = SolveStatus::Optimal;
        }

        let (x, y, primal_res, dual_res) = best.unwrap_or_else(|| {
            let (rp, rd) = self.plain_residuals(&x, &y);
            (x, y, rp, rd)
        });
        Ok(QpSolution { x, y, status, iterations, primal_res, dual_res })
    }

    #[allow(clippy::type_complexity)]
    fn residuals(
        &self,
        x: &[f64],
        y: &[f64],
        z: &[f64],
        cx: &[f64],
    ) -> (f64, f64, f64, f64, f64, f64) {
        let s = self.settings;
        let rp = cx.iter().zip(z).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let px = self.p_sparse.matvec(x);
        let cty = self.c_sparse.matvec_transpose(y);
        let mut rd = 0.0f64;
        for i in 0..x.len() {
            rd = rd.max((px[i] + self.problem.q[i] + cty[i]).abs());
        }
        let scale_p = norm_inf(cx).max(norm_inf(z));
        let scale_d = norm_inf(&px).max(norm_inf(&self.problem.q)).max(norm_inf(&cty));
        let eps_p = s.eps_abs + s.eps_rel * scale_p;
        let eps_d = s.eps_abs + s.eps_rel * scale_d;
        (rp, rd, eps_p, eps_d, scale_p, scale_d)
    }

    /// Residuals of an arbitrary primal/dual pair (used to judge polish).
    fn plain_residuals(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        let cx = self.c_sparse.matvec(x);
        let clamped = clamp_to_bounds(&cx, self.problem.lower(), self.problem.upper());
        let rp = cx.iter().zip(&clamped).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let px = self.p_sparse.matvec(x);
        let cty = self.c_sparse.matvec_transpose(y);
        let mut rd = 0.0f64;
        for i in 0..x.len() {
            rd = rd.max((px[i] + self.problem.q[i] + cty[i]).abs());
        }
        (rp, rd)
    }

    fn adapt_rho(&mut self, rp: f64, rd: f64, scale_p: f64, scale_d: f64) -> Result<(), QpError> {
        // each update refactors the reduced matrix; a handful is plenty
        const MAX_UPDATES: usize = 6;
        if self.rho_updates >= MAX_UPDATES {
            return Ok(());
        }
        let rel_p = rp / scale_p.max(1e-10);
        let rel_d = rd / scale_d.max(1e-10);
        let proposed = (self.rho_base * (rel_p / rel_d.max(1e-12)).sqrt()).clamp(1e-6, 1e6);
        let ratio = proposed / self.rho_base;
        if !(0.2..=5.0).contains(&ratio) {
            self.rho_base = proposed;
            self.rho = row_penalties(self.problem, self.rho_base);
            self.factor = factor_reduced(self.problem, &self.c_sparse, &self.rho)?;
            self.rho_updates += 1;
        }
        Ok(())
    }

    /// Divergence-pattern heuristic for primal infeasibility: the windowed
    /// dual step must be (nearly) in the null space of C' while certifying
    /// a separating direction on the bounds.
    fn primal_infeasible(&self, y: &[f64], y_prev: &[f64]) -> bool {
        let m = y.len();
        if m == 0 {
            return false;
        }
        let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
        let norm_dy = norm_inf(&dy);
        if norm_dy <= 1e-12 * (1.0 + norm_inf(y)) {
            return false;
        }
        let eps = 1e-4 * norm_dy;
        let ct_dy = self.c_sparse.matvec_transpose(&dy);
        if norm_inf(&ct_dy) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..m {
            let d = dy[i];
            if d.abs() <= 1e-10 * norm_dy {
                continue;
            }
            let bound = if d > 0.0 { self.problem.upper[i] } else { self.problem.lower[i] };
            if bound.is_infinite() {
                return false;
            }
            support += bound * d;
        }
        support <= -eps
    }

    /// Active-set finisher. Seeds a working set from the dual signs (sides
    /// without a finite bound are dropped — a converged-but-noisy dual can
    /// point at an infinite bound), solves the equality-constrained KKT
    /// system on it, then refines the set: rows violated by the candidate
    /// are added, active rows whose multiplier has the wrong sign are
    /// dropped. Returns the best candidate seen with its residuals; the
    /// caller keeps it only if it beats the unpolished iterate.
    fn polish(&self, x: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
        const FEAS_TOL: f64 = 1e-9;
        const SIGN_TOL: f64 = 1e-9;
        const MAX_ROUNDS: usize = 5;
        // direct KKT solves on huge active sets cost more than they save;
        // past this dimension the caller's absolute-accuracy fallback wins
        const DIM_CAP: usize = 450;

        let lower = self.problem.lower();
        let upper = self.problem.upper();
        let m = lower.len();
        let _ = x;

        let mut working: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            if lower[i] == upper[i] {
                working.push((i, lower[i]));
            } else if y[i] < 0.0 && lower[i].is_finite() {
                working.push((i, lower[i]));
            } else if y[i] > 0.0 && upper[i].is_finite() {
                working.push((i, upper[i]));
            }
        }

        let mut best: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
        for _round in 0..MAX_ROUNDS {
            if self.problem.num_vars() + working.len() > DIM_CAP {
                break;
            }
            let Some((px, py)) = self.polish_with_active_set(&working) else {
                break;
            };
            let (rp, rd) = self.plain_residuals(&px, &py);
            // a candidate with a wrong-signed multiplier is a stationary
            // point of the wrong face, not an optimum: never keep it
            let sign_ok = working.iter().all(|&(i, bound)| {
                if lower[i] == upper[i] {
                    true
                } else if bound == lower[i] {
                    py[i] <= SIGN_TOL
                } else {
                    py[i] >= -SIGN_TOL
                }
            });
            let better = match &best {
                None => true,
                Some((_, _, brp, brd)) => rp.max(rd) < brp.max(*brd),
            };
            let cx = self.c_sparse.matvec(&px);
            if sign_ok {
                if better {
                    best = Some((px, py.clone(), rp, rd));
                }
                if rp <= FEAS_TOL && rd <= FEAS_TOL {
                    break;
                }
            }

            let mut changed = false;
            working.retain(|&(i, bound)| {
                if lower[i] == upper[i] {
                    return true;
                }
                let wrong = if bound == lower[i] { py[i] > SIGN_TOL } else { py[i] < -SIGN_TOL };
                if wrong {
                    changed = true;
                }
                !wrong
            });
            for i in 0..m {
                if working.iter().any(|&(row, _)| row == i) {
                    continue;
                }
                if cx[i] < lower[i] - FEAS_TOL {
                    working.push((i, lower[i]));
                    changed = true;
                } else if cx[i] > upper[i] + FEAS_TOL {
                    working.push((i, upper[i]));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            working.sort_by_key(|&(row, _)| row);
        }
        best
    }

    fn polish_with_active_set(&self, active: &[(usize, f64)]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.problem.num_vars();
        let ma = active.len();
        let dim = n + ma;
        const DELTA: f64 = 1e-9;

        let mut kkt = Matrix::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                kkt.set(r, c, self.problem.p.get(r, c));
            }
            kkt.add_at(r, r, DELTA);
        }
        for (a, &(row, _)) in active.iter().enumerate() {
            for &(c, v) in self.c_sparse.row(row) {
                kkt.set(n + a, c, v);
                kkt.set(c, n + a, v);
            }
            kkt.set(n + a, n + a, -DELTA);
        }
        let factor = LdlFactor::factor(&kkt, false).ok()?;

        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            rhs[i] = -self.problem.q[i];
        }
        for (a, &(_, bound)) in active.iter().enumerate() {
            rhs[n + a] = bound;
        }

        let mut sol = factor.solve(&rhs);
        // refinement against the unregularized KKT operator
        for _ in 0..3 {
            let mut resid = rhs.clone();
            let (xs, nu) = sol.split_at(n);
            let px = self.p_sparse.matvec(xs);
            for i in 0..n {
                resid[i] -= px[i];
            }
            for (a, &(row, _)) in active.iter().enumerate() {
                let mut cx = 0.0;
                for &(c, v) in self.c_sparse.row(row) {
                    cx += v * xs[c];
                    resid[c] -= v * nu[a];
                }
                resid[n + a] -= cx;
            }
            let corr = factor.solve(&resid);
            for i in 0..dim {
                sol[i] += corr[i];
            }
        }

        let mut y_new = vec![0.0; self.problem.num_constraints()];
        for (a, &(row, _)) in active.iter().enumerate() {
            y_new[row] = sol[n + a];
        }
        let x_new = sol[..n].to_vec();
        if x_new.iter().any(|v| !v.is_finite()) || y_new.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((x_new, y_new))
    }
}

/// Per-row penalties: the base rho normalized by the squared row norm (so
/// rows of very different magnitude contract at the same rate) and boosted
/// on equality rows.
fn row_penalties(problem: &QpProblem, base: f64) -> Vec<f64> {
    let m = problem.num_constraints();
    let mut rho = Vec::with_capacity(m);
    for i in 0..m {
        let norm_sq: f64 = problem.c.row(i).iter().map(|v| v * v).sum();
        let boost = if problem.lower[i] == problem.upper[i] { RHO_EQ_BOOST } else { 1.0 };
        rho.push(base * boost / norm_sq.max(1e-8));
    }
    rho
}

/// Factor `P + sigma*I + C' R C`; failure means `P` was not PSD.
fn factor_reduced(
    problem: &QpProblem,
    c_sparse: &SparseRows,
    rho: &[f64],
) -> Result<LdlFactor, QpError> {
    let n = problem.num_vars();
    let mut m = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            m.set(r, c, problem.p.get(r, c));
        }
        m.add_at(r, r, SIGMA);
    }
    for row in 0..c_sparse.nrows() {
        let entries = c_sparse.row(row);
        let w = rho[row];
        for &(i, vi) in entries {
            for &(j, vj) in entries {
                m.add_at(i, j, w * vi * vj);
            }
        }
    }
    LdlFactor::factor(&m, true).map_err(|e| QpError::NotConvex { pivot: e.pivot })
}

fn clamp_to_bounds(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lower.iter().zip(upper))
        .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
        .collect()
}

/// KKT residuals of a primal/dual pair:
/// `primal = ||clip(Cx, l, u) - Cx||_inf`, `dual = ||Px + q + C'y||_inf`,
/// and the worst complementary-slackness product `|y_i| * dist(C_i x, bound)`
/// where the bound is chosen by the sign of `y_i`.
pub fn kkt_residuals(problem: &QpProblem, x: &[f64], y: &[f64]) -> Result<(f64, f64, f64), QpError> {
    if x.len() != problem.num_vars() {
        return Err(QpError::DimensionMismatch(format!(
            "x has length {}, expected {}",
            x.len(),
            problem.num_vars()
        )));
    }
    if y.len() != problem.num_constraints() {
        return Err(QpError::DimensionMismatch(format!(
            "y has length {}, expected {}",
            y.len(),
            problem.num_constraints()
        )));
    }
    let cx = problem.c.matvec(x);
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..cx.len() {
        let clipped = cx[i].clamp(problem.lower[i], problem.upper[i]);
        primal = primal.max((clipped - cx[i]).abs());
        let yi = y[i];
        if yi > 0.0 {
            comp = comp.max(yi.abs() * (problem.upper[i] - cx[i]).abs());
        } else if yi < 0.0 {
            comp = comp.max(yi.abs() * (cx[i] - problem.lower[i]).abs());
        }
    }
    let px = problem.p.matvec(x);
    let cty = problem.c.matvec_transpose(y);
    let mut dual = 0.0f64;
    for i in 0..x.len() {
        dual = dual.max((px[i] + problem.q[i] + cty[i]).abs());
    }
    Ok((primal, dual, comp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_box_qp() -> QpProblem {
        // min x^2 s.t. 1 <= x <= 2
        QpProblem::new(
            Matrix::from_rows(1, 1, vec![2.0]),
            vec![0.0],
            Matrix::from_rows(1, 1, vec![1.0]),
            vec![1.0],
            vec![2.0],
        )
        .unwrap()
    }

    #[test]
    fn clamped_scalar_minimum() {
        let sol = solve_qp(&scalar_box_qp(), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        let (rp, rd, comp) = kkt_residuals(&scalar_box_qp(), &sol.x, &sol.y).unwrap();
        assert!(rp <= 1e-6 && rd <= 1e-6 && comp <= 1e-6);
    }

    #[test]
    fn independent_box_projection() {
        // min (x-3)^2 + (y+1)^2 s.t. 0 <= x, y <= 2  ->  (2, 0)
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 0.0, 0.0, 2.0]),
            vec![-6.0, 2.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            vec![2.0, 2.0],
        )
        .unwrap();
        let sol = solve_qp(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn kkt_residuals_at_infeasible_point() {
        let problem = scalar_box_qp();
        let (rp, _, _) = kkt_residuals(&problem, &[0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(rp, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dual_residual_grows_linearly_under_perturbation() {
        let problem = scalar_box_qp();
        let sol = solve_qp(&problem, &SolverSettings::default()).unwrap();
        let mut prev = 0.0;
        for (i, delta) in [1e-4, 2e-4, 4e-4].iter().enumerate() {
            let (_, rd, _) = kkt_residuals(&problem, &[sol.x[0] + delta], &sol.y).unwrap();
            // ||P|| = 2, so the dual residual moves by ~2*delta
            assert_abs_diff_eq!(rd, 2.0 * delta + sol.dual_res, epsilon = 1e-5);
            if i > 0 {
                assert!(rd > prev);
            }
            prev = rd;
        }
    }

    #[test]
    fn equality_rows_are_honored() {
        // min x^2 + y^2 s.t. x + y = 1  ->  (0.5, 0.5)
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 0.0, 0.0, 2.0]),
            vec![0.0, 0.0],
            Matrix::from_rows(1, 2, vec![1.0, 1.0]),
            vec![1.0],
            vec![1.0],
        )
        .unwrap();
        let sol = solve_qp(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-7);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= 0 cannot both hold
        let problem = QpProblem::new(
            Matrix::from_rows(1, 1, vec![2.0]),
            vec![0.0],
            Matrix::from_rows(2, 1, vec![1.0, 1.0]),
            vec![1.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, 0.0],
        )
        .unwrap();
        let sol = solve_qp(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn reports_max_iter_with_best_iterate() {
        let settings = SolverSettings { max_iter: 3, polish: false, ..Default::default() };
        let sol = solve_qp(&scalar_box_qp(), &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIter);
        assert_eq!(sol.iterations, 3);
        assert!(sol.x[0].is_finite());
    }

    #[test]
    fn rejects_asymmetric_p() {
        let err = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 1.0, 0.0, 2.0]),
            vec![0.0, 0.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, QpError::NotSymmetric { .. }));
    }

    #[test]
    fn rejects_inverted_bounds_and_bad_dims() {
        let err = QpProblem::new(
            Matrix::from_rows(1, 1, vec![2.0]),
            vec![0.0],
            Matrix::from_rows(1, 1, vec![1.0]),
            vec![2.0],
            vec![1.0],
        )
        .unwrap_err();
        assert!(matches!(err, QpError::InvalidBounds { row: 0, .. }));

        let err = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 0.0, 0.0, 2.0]),
            vec![0.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, QpError::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_indefinite_p() {
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, -1.0]),
            vec![0.0, 0.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            solve_qp(&problem, &SolverSettings::default()),
            Err(QpError::NotConvex { .. })
        ));
    }

    #[test]
    fn row_scaling_leaves_primal_unchanged() {
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 0.5, 0.5, 4.0]),
            vec![-1.0, -2.0],
            Matrix::from_rows(3, 2, vec![1.0, 1.0, 1.0, -1.0, 0.0, 1.0]),
            vec![-1.0, -2.0, 0.0],
            vec![1.0, 2.0, 0.8],
        )
        .unwrap();
        let base = solve_qp(&problem, &SolverSettings::default()).unwrap();

        let s = 13.0;
        let scaled = QpProblem::new(
            problem.p.clone(),
            problem.q.clone(),
            Matrix::from_rows(3, 2, vec![s, s, 1.0, -1.0, 0.0, 1.0]),
            vec![-s, -2.0, 0.0],
            vec![s, 2.0, 0.8],
        )
        .unwrap();
        let sol = solve_qp(&scaled, &SolverSettings::default()).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(sol.x[i], base.x[i], epsilon = 1e-6);
        }
        // duals of the scaled row shrink by 1/s
        assert_abs_diff_eq!(sol.y[0], base.y[0] / s, epsilon = 1e-6);
    }

    #[test]
    fn redundant_row_does_not_move_solution() {
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![2.0, 0.0, 0.0, 2.0]),
            vec![-6.0, 2.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            vec![2.0, 2.0],
        )
        .unwrap();
        let base = solve_qp(&problem, &SolverSettings::default()).unwrap();

        let dup = QpProblem::new(
            problem.p.clone(),
            problem.q.clone(),
            Matrix::from_rows(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]),
            vec![0.0, 0.0, 0.0],
            vec![2.0, 2.0, 2.0],
        )
        .unwrap();
        let sol = solve_qp(&dup, &SolverSettings::default()).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(sol.x[i], base.x[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn solution_insensitive_to_penalty_choice() {
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![3.0, 1.0, 1.0, 2.0]),
            vec![1.0, -4.0],
            Matrix::from_rows(2, 2, vec![1.0, 2.0, 1.0, 0.0]),
            vec![-1.0, -0.5],
            vec![2.0, 1.5],
        )
        .unwrap();
        let a = solve_qp(&problem, &SolverSettings { rho: 0.01, ..Default::default() }).unwrap();
        let b = solve_qp(&problem, &SolverSettings { rho: 10.0, ..Default::default() }).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(a.x[i], b.x[i], epsilon = 1e-5);
        }
    }

    #[test]
    fn warm_start_converges_faster() {
        let problem = QpProblem::new(
            Matrix::from_rows(3, 3, vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 5.0]),
            vec![-1.0, 2.0, -3.0],
            Matrix::from_rows(4, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
            vec![-1.0, -1.0, -1.0, -2.0],
            vec![1.0, 1.0, 1.0, 2.0],
        )
        .unwrap();
        let settings = SolverSettings { polish: false, ..Default::default() };
        let cold = solve_qp(&problem, &settings).unwrap();
        let warm = solve_qp_warm(&problem, &settings, &cold.x, &cold.y).unwrap();
        assert_eq!(warm.status, SolveStatus::Optimal);
        assert!(warm.iterations < cold.iterations, "warm {} vs cold {}", warm.iterations, cold.iterations);
    }

    #[test]
    fn deterministic_across_runs() {
        let problem = QpProblem::new(
            Matrix::from_rows(2, 2, vec![3.0, 1.0, 1.0, 2.0]),
            vec![1.0, -4.0],
            Matrix::from_rows(2, 2, vec![1.0, 2.0, 1.0, 0.0]),
            vec![-1.0, -0.5],
            vec![2.0, 1.5],
        )
        .unwrap();
        let a = solve_qp(&problem, &SolverSettings::default()).unwrap();
        let b = solve_qp(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn polish_tightens_residuals() {
        let problem = scalar_box_qp();
        let rough = solve_qp(&problem, &SolverSettings { polish: false, ..Default::default() }).unwrap();
        let polished = solve_qp(&problem, &SolverSettings::default()).unwrap();
        assert!(polished.primal_res.max(polished.dual_res) <= rough.primal_res.max(rough.dual_res));
        assert!(polished.primal_res.max(polished.dual_res) < 1e-9);
    }
}
