//! The robust battery dispatch problem.
//!
//! The dispatch QP keeps both charge and discharge power as decision
//! variables per battery and bounds the stored energy twice: from below by
//! the relaxed model's trajectory and from above by the simplified model's
//! trajectory. Because the true state of charge always lies between those
//! two (see [`crate::battery`]), any feasible point of this problem yields a
//! net-power schedule that the real battery can execute without leaving its
//! energy limits. The cutting plane `pc + pd <= p_max` halves the worst-case
//! gap between the envelopes.
//!
//! Decision vector layout for `N` batteries over `T` steps:
//! `x = [pc_1; pd_1; ...; pc_N; pd_N]` (`2NT` variables). Constraint rows
//! per battery `i`, in order: `T` lower-envelope rows, `T` upper-envelope
//! rows, `T` charge-box rows, `T` discharge-box rows, `T` cutting-plane rows.
//!
//! The tracking objective `sum_k (p_ref[k] - sum_i pb_i[k])^2` only touches
//! fleet sums, so its Hessian is rank-deficient for more than one battery; a
//! small quadratic regularization makes the per-battery split unique (and
//! symmetric across identical batteries).

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::battery::{
    check_soc_limits, net_of, simulate_relaxed, simulate_simplified, simulate_standard, split_net,
    symmetric_eta, BatteryError, BatterySpec, LimitReport, NetSchedule, Schedule, SocTrajectory,
    TimeGrid,
};
use crate::linalg::Matrix;
use crate::qp::{solve_qp, QpError, QpProblem, SolveStatus, SolverSettings};

/// Default quadratic regularization weight, relative to the largest entry
/// of the tracking Hessian.
pub const DEFAULT_REGULARIZATION_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Error)]
pub enum DispatchError {
    #[error("invalid dispatch problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solver finished with status {status} after {iterations} iterations")]
    SolverNotOptimal { status: SolveStatus, iterations: usize },
    #[error("result does not belong to this problem: {0}")]
    MismatchedResult(String),
}

/// How the simplified model's net efficiency is chosen per battery.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaPolicy {
    /// `eta = (eta_c + 1/eta_d) / 2` per battery (equalizes the mismatch
    /// slopes in both directions).
    Symmetric,
    /// One explicit `eta` per battery, each within `[eta_c, 1/eta_d]`.
    Explicit(Vec<f64>),
}

/// Fleet, horizon, and reference signal to track.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    batteries: Vec<BatterySpec>,
    grid: TimeGrid,
    reference: Vec<f64>,
    eta_policy: EtaPolicy,
    regularization_eps: f64,
}

impl DispatchProblem {
    pub fn new(
        batteries: Vec<BatterySpec>,
        grid: TimeGrid,
        reference: Vec<f64>,
    ) -> Result<Self, DispatchError> {
        Self::with_options(batteries, grid, reference, EtaPolicy::Symmetric, DEFAULT_REGULARIZATION_EPS)
    }

    pub fn with_options(
        batteries: Vec<BatterySpec>,
        grid: TimeGrid,
        reference: Vec<f64>,
        eta_policy: EtaPolicy,
        regularization_eps: f64,
    ) -> Result<Self, DispatchError> {
        if batteries.is_empty() {
            return Err(DispatchError::InvalidProblem("at least one battery required".into()));
        }
        if reference.len() != grid.steps {
            return Err(DispatchError::InvalidProblem(format!(
                "reference has {} entries, horizon has {} steps",
                reference.len(),
                grid.steps
            )));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(DispatchError::InvalidProblem("reference must be finite".into()));
        }
        if !(regularization_eps.is_finite() && regularization_eps >= 0.0) {
            return Err(DispatchError::InvalidProblem(format!(
                "regularization_eps must be nonnegative, got {regularization_eps}"
            )));
        }
        if let EtaPolicy::Explicit(etas) = &eta_policy {
            if etas.len() != batteries.len() {
                return Err(DispatchError::InvalidProblem(format!(
                    "{} explicit eta values for {} batteries",
                    etas.len(),
                    batteries.len()
                )));
            }
            for (i, (eta, spec)) in etas.iter().zip(&batteries).enumerate() {
                if !(*eta >= spec.eta_c && *eta <= 1.0 / spec.eta_d) {
                    return Err(DispatchError::InvalidProblem(format!(
                        "eta {eta} for battery {i} outside [{}, {}]",
                        spec.eta_c,
                        1.0 / spec.eta_d
                    )));
                }
            }
        }
        Ok(DispatchProblem { batteries, grid, reference, eta_policy, regularization_eps })
    }

    pub fn batteries(&self) -> &[BatterySpec] {
        &self.batteries
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn eta_policy(&self) -> &EtaPolicy {
        &self.eta_policy
    }

    pub fn regularization_eps(&self) -> f64 {
        self.regularization_eps
    }

    /// Net efficiency used for battery `i`'s upper envelope.
    pub fn eta_for(&self, i: usize) -> f64 {
        match &self.eta_policy {
            EtaPolicy::Symmetric => symmetric_eta(&self.batteries[i]).0,
            EtaPolicy::Explicit(etas) => etas[i],
        }
    }

    /// Constant term that completes the QP objective into the tracking
    /// objective `sum_k (p_ref - fleet)^2`.
    pub fn objective_constant(&self) -> f64 {
        self.reference.iter().map(|r| r * r).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub iterations: usize,
    pub status: SolveStatus,
    pub solve_time: Duration,
}

/// Optimized schedules plus everything derived from them. Envelopes and the
/// realized trajectory are recomputed through the simulators, not read off
/// the QP's constraint slacks.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    schedules: Vec<Schedule>,
    nets: Vec<NetSchedule>,
    relaxed: Vec<SocTrajectory>,
    simplified: Vec<SocTrajectory>,
    realized: Vec<SocTrajectory>,
    reference: Vec<f64>,
    grid: TimeGrid,
    objective: f64,
    rmse: f64,
    stats: SolverStats,
}

impl DispatchResult {
    /// Derive a full result from per-battery schedules. Used by the QP path
    /// and the exact baseline alike.
    pub fn assemble(
        problem: &DispatchProblem,
        schedules: Vec<Schedule>,
        stats: SolverStats,
    ) -> Result<Self, DispatchError> {
        if schedules.len() != problem.batteries.len() {
            return Err(DispatchError::MismatchedResult(format!(
                "{} schedules for {} batteries",
                schedules.len(),
                problem.batteries.len()
            )));
        }
        let grid = problem.grid;
        let mut nets = Vec::with_capacity(schedules.len());
        let mut relaxed = Vec::with_capacity(schedules.len());
        let mut simplified = Vec::with_capacity(schedules.len());
        let mut realized = Vec::with_capacity(schedules.len());
        for (i, sched) in schedules.iter().enumerate() {
            let spec = &problem.batteries[i];
            let net = net_of(sched);
            relaxed.push(simulate_relaxed(spec, &grid, sched)?);
            simplified.push(simulate_simplified(spec, &grid, &net, problem.eta_for(i))?);
            realized.push(simulate_standard(spec, &grid, &split_net(&net))?);
            nets.push(net);
        }
        let fleet = fleet_net(&nets, grid.steps);
        let objective: f64 = problem
            .reference
            .iter()
            .zip(&fleet)
            .map(|(r, s)| (r - s) * (r - s))
            .sum();
        let rmse = (objective / grid.steps as f64).sqrt();
        Ok(DispatchResult {
            schedules,
            nets,
            relaxed,
            simplified,
            realized,
            reference: problem.reference.clone(),
            grid,
            objective,
            rmse,
            stats,
        })
    }

    pub fn num_batteries(&self) -> usize {
        self.schedules.len()
    }

    pub fn schedule(&self, i: usize) -> &Schedule {
        &self.schedules[i]
    }

    pub fn net(&self, i: usize) -> &NetSchedule {
        &self.nets[i]
    }

    pub fn relaxed_envelope(&self, i: usize) -> &SocTrajectory {
        &self.relaxed[i]
    }

    pub fn simplified_envelope(&self, i: usize) -> &SocTrajectory {
        &self.simplified[i]
    }

    pub fn realized_trajectory(&self, i: usize) -> &SocTrajectory {
        &self.realized[i]
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Summed fleet net power per step, kW.
    pub fn fleet_net(&self) -> Vec<f64> {
        fleet_net(&self.nets, self.grid.steps)
    }

    /// Tracking objective `sum_k (p_ref - fleet)^2`, kW^2.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    pub fn stats(&self) -> &SolverStats {
        &self.stats
    }
}

fn fleet_net(nets: &[NetSchedule], steps: usize) -> Vec<f64> {
    let mut fleet = vec![0.0; steps];
    for net in nets {
        for (k, v) in net.pb().iter().enumerate() {
            fleet[k] += v;
        }
    }
    fleet
}

/// Assemble the dispatch QP for a problem. See the module docs for the
/// variable and row layout.
pub fn build_rbd(problem: &DispatchProblem) -> Result<QpProblem, DispatchError> {
    let n_batt = problem.batteries.len();
    let t = problem.grid.steps;
    let dt = problem.grid.dt;
    let n = 2 * n_batt * t;
    let m = 5 * n_batt * t;

    let mut c = Matrix::zeros(m, n);
    let mut lower = vec![f64::NEG_INFINITY; m];
    let mut upper = vec![f64::INFINITY; m];

    for (i, spec) in problem.batteries.iter().enumerate() {
        let col_pc = 2 * t * i;
        let col_pd = col_pc + t;
        let row0 = 5 * t * i;
        let eta = problem.eta_for(i);

        // lower envelope: relaxed-model SoC stays above zero
        for l in 0..t {
            let row = row0 + l;
            for k in 0..=l {
                c.set(row, col_pc + k, dt * spec.eta_c);
                c.set(row, col_pd + k, -dt / spec.eta_d);
            }
            lower[row] = -spec.e0;
        }
        // upper envelope: simplified-model SoC stays below capacity
        for l in 0..t {
            let row = row0 + t + l;
            for k in 0..=l {
                c.set(row, col_pc + k, dt * eta);
                c.set(row, col_pd + k, -dt * eta);
            }
            upper[row] = spec.e_max - spec.e0;
        }
        // power boxes
        for k in 0..t {
            let row = row0 + 2 * t + k;
            c.set(row, col_pc + k, 1.0);
            lower[row] = 0.0;
            upper[row] = spec.p_max;
        }
        for k in 0..t {
            let row = row0 + 3 * t + k;
            c.set(row, col_pd + k, 1.0);
            lower[row] = 0.0;
            upper[row] = spec.p_max;
        }
        // cutting plane
        for k in 0..t {
            let row = row0 + 4 * t + k;
            c.set(row, col_pc + k, 1.0);
            c.set(row, col_pd + k, 1.0);
            upper[row] = spec.p_max;
        }
    }

    let (p, q) = tracking_cost(problem);
    Ok(QpProblem::new(p, q, c, lower, upper)?)
}

/// Tracking Hessian and linear term: `0.5 x'Px + q'x + sum(p_ref^2)` equals
/// `sum_k (p_ref - fleet)^2 + reg*||x||^2`.
pub(crate) fn tracking_cost(problem: &DispatchProblem) -> (Matrix, Vec<f64>) {
    let n_batt = problem.batteries.len();
    let t = problem.grid.steps;
    let n = 2 * n_batt * t;

    // signed column for each decision variable in the fleet sum at its step
    let sign = |offset_in_block: usize| if offset_in_block < t { 1.0 } else { -1.0 };

    let mut p = Matrix::zeros(n, n);
    for i in 0..n_batt {
        for j in 0..n_batt {
            for k in 0..t {
                for (oi, oj) in [(k, k), (k, t + k), (t + k, k), (t + k, t + k)] {
                    let r = 2 * t * i + oi;
                    let cc = 2 * t * j + oj;
                    p.add_at(r, cc, 2.0 * sign(oi) * sign(oj));
                }
            }
        }
    }
    let reg = problem.regularization_eps * p.max_abs();
    for d in 0..n {
        p.add_at(d, d, 2.0 * reg);
    }

    let mut q = vec![0.0; n];
    for i in 0..n_batt {
        for k in 0..t {
            q[2 * t * i + k] = -2.0 * problem.reference[k];
            q[2 * t * i + t + k] = 2.0 * problem.reference[k];
        }
    }
    (p, q)
}

/// Build, solve, and post-process the dispatch problem. Fails with
/// [`DispatchError::SolverNotOptimal`] if the QP does not reach optimality.
pub fn solve_rbd(
    problem: &DispatchProblem,
    settings: &SolverSettings,
) -> Result<DispatchResult, DispatchError> {
    let qp = build_rbd(problem)?;
    let start = Instant::now();
    let sol = solve_qp(&qp, settings)?;
    let solve_time = start.elapsed();
    if sol.status != SolveStatus::Optimal {
        return Err(DispatchError::SolverNotOptimal {
            status: sol.status,
            iterations: sol.iterations,
        });
    }
    let schedules = extract_schedules(problem, &sol.x);
    let stats = SolverStats { iterations: sol.iterations, status: sol.status, solve_time };
    DispatchResult::assemble(problem, schedules, stats)
}

/// Slice the stacked decision vector into per-battery schedules, clamping
/// solver-tolerance noise back into the power boxes.
pub(crate) fn extract_schedules(problem: &DispatchProblem, x: &[f64]) -> Vec<Schedule> {
    let t = problem.grid.steps;
    problem
        .batteries
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let base = 2 * t * i;
            let pc: Vec<f64> = (0..t).map(|k| x[base + k].clamp(0.0, spec.p_max)).collect();
            let pd: Vec<f64> = (0..t).map(|k| x[base + t + k].clamp(0.0, spec.p_max)).collect();
            Schedule::new(pc, pd).expect("clamped schedule is valid")
        })
        .collect()
}

/// Per-battery certification outcome.
#[derive(Debug, Clone)]
pub struct BatteryRealizability {
    pub realized: SocTrajectory,
    pub limits: LimitReport,
    /// Envelope ordering `relaxed <= realized <= simplified` held elementwise.
    pub sandwich_ok: bool,
}

/// Certification of a dispatch result against the exact battery model.
#[derive(Debug, Clone)]
pub struct RealizabilityReport {
    pub per_battery: Vec<BatteryRealizability>,
    pub passed: bool,
    /// Worst undershoot below 0 across the fleet, kWh.
    pub worst_below: f64,
    /// Worst overshoot above capacity across the fleet, kWh.
    pub worst_above: f64,
}

/// Re-dispatch each battery's net power through the exact complementarity
/// model and check the resulting trajectory against the energy limits with
/// slack `tol` (kWh). Also re-checks the envelope sandwich on the result.
pub fn verify_realizability(
    result: &DispatchResult,
    problem: &DispatchProblem,
    tol: f64,
) -> Result<RealizabilityReport, DispatchError> {
    if result.num_batteries() != problem.batteries.len() {
        return Err(DispatchError::MismatchedResult(format!(
            "result has {} batteries, problem has {}",
            result.num_batteries(),
            problem.batteries.len()
        )));
    }
    if result.grid != problem.grid {
        return Err(DispatchError::MismatchedResult("time grids differ".into()));
    }
    const SANDWICH_SLACK: f64 = 1e-9;
    let mut per_battery = Vec::with_capacity(problem.batteries.len());
    let mut passed = true;
    let mut worst_below = 0.0f64;
    let mut worst_above = 0.0f64;
    for (i, spec) in problem.batteries.iter().enumerate() {
        let pair = split_net(result.net(i));
        let realized = simulate_standard(spec, &problem.grid, &pair)?;
        let limits = check_soc_limits(&realized, spec, tol);
        let sandwich_ok = result
            .relaxed_envelope(i)
            .energy()
            .iter()
            .zip(realized.energy())
            .zip(result.simplified_envelope(i).energy())
            .all(|((lo, mid), hi)| *lo <= mid + SANDWICH_SLACK && *mid <= hi + SANDWICH_SLACK);
        passed &= limits.passed && sandwich_ok;
        worst_below = worst_below.max(limits.worst_below);
        worst_above = worst_above.max(limits.worst_above);
        per_battery.push(BatteryRealizability { realized, limits, sandwich_ok });
    }
    Ok(RealizabilityReport { per_battery, passed, worst_below, worst_above })
}
