//! Exact dispatch baseline: branch-and-bound over charge/discharge modes.
//!
//! The exact problem keeps the true two-efficiency dynamics (both SoC bounds
//! on the standard trajectory) and the rule that a battery cannot charge and
//! discharge in the same step. Instead of big-M binaries, complementarity is
//! enforced by branching: each node fixes, per (battery, step), whether the
//! charge or the discharge side is forced to zero, and the node relaxation —
//! the same QP without the rule — bounds the subtree from below.
//!
//! Since the tracking objective only sees net power, splitting a node
//! solution into its positive/negative parts preserves its objective; a node
//! is fathomed the moment its split schedule survives the exact SoC check,
//! with the node value attained exactly. Branching is therefore only needed
//! where the relaxation exploited simultaneous charge/discharge to burn
//! surplus energy.

use std::time::Instant;

use thiserror::Error;

use crate::battery::{
    check_soc_limits, net_of, simulate_standard, split_net, BatteryError, Schedule,
};
use crate::dispatch::{
    extract_schedules, solve_rbd, tracking_cost, DispatchError, DispatchProblem, DispatchResult,
    SolverStats,
};
use crate::linalg::Matrix;
use crate::qp::{solve_qp_warm, QpError, QpProblem, SolveStatus, SolverSettings};

/// Product tolerance (kW^2) above which a step counts as simultaneously
/// charging and discharging when selecting a branching point. Looser than
/// the simulator's admission tolerance; incumbents are re-split before
/// certification anyway.
pub const NODE_TOL_COMP: f64 = 1e-6;

/// Slack (kWh) for certifying an incumbent trajectory against the exact
/// SoC limits.
const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum BnbError {
    #[error("problem too large for exhaustive enumeration: {modes} mode patterns")]
    TooLarge { modes: u64 },
    #[error("all steps satisfy complementarity; nothing to branch on")]
    AllComplementary,
    #[error("node relaxation finished with status {status}")]
    NodeSolve { status: SolveStatus },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
}

/// Complementarity state of one (battery, step) slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Free,
    ChargeOnly,
    DischargeOnly,
}

/// Per-battery, per-step mode grid; the branching object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeAssignment {
    n_batteries: usize,
    steps: usize,
    modes: Vec<Mode>,
}

impl ModeAssignment {
    pub fn all_free(n_batteries: usize, steps: usize) -> Self {
        ModeAssignment { n_batteries, steps, modes: vec![Mode::Free; n_batteries * steps] }
    }

    pub fn get(&self, battery: usize, step: usize) -> Mode {
        self.modes[battery * self.steps + step]
    }

    pub fn set(&mut self, battery: usize, step: usize, mode: Mode) {
        self.modes[battery * self.steps + step] = mode;
    }

    pub fn n_batteries(&self) -> usize {
        self.n_batteries
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone)]
pub struct BnbSettings {
    /// Maximum number of node relaxations to solve.
    pub node_limit: usize,
    /// Relative optimality gap at which the search stops.
    pub gap_tol: f64,
    /// Record a per-node trace (id, depth, bound, incumbent).
    pub trace: bool,
    /// Settings for the node QP solves.
    pub qp: SolverSettings,
}

impl Default for BnbSettings {
    fn default() -> Self {
        BnbSettings {
            node_limit: 100_000,
            gap_tol: 1e-4,
            trace: false,
            qp: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    /// Search closed the gap below `gap_tol` (or exhausted the tree).
    Optimal,
    /// Node limit reached; incumbent and gap are still reported.
    NodeLimit,
}

impl std::fmt::Display for BnbStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BnbStatus::Optimal => f.write_str("optimal"),
            BnbStatus::NodeLimit => f.write_str("node_limit"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeTraceRow {
    pub node_id: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub dispatch: DispatchResult,
    pub nodes_explored: usize,
    pub incumbent_objective: f64,
    pub best_bound: f64,
    /// `(incumbent - bound) / max(1, |incumbent|)`
    pub gap: f64,
    pub status: BnbStatus,
    pub node_trace: Option<Vec<NodeTraceRow>>,
}

/// Pick the branching slot: the (battery, step) with the largest
/// `min(pc, pd)` among slots whose product exceeds [`NODE_TOL_COMP`].
/// Ties break to the smallest step, then the smallest battery index.
pub fn branch_select(schedules: &[Schedule]) -> Result<(usize, usize), BnbError> {
    let mut best: Option<(usize, usize, f64)> = None;
    let steps = schedules.first().map_or(0, Schedule::len);
    for k in 0..steps {
        for (i, sched) in schedules.iter().enumerate() {
            let pc = sched.pc()[k];
            let pd = sched.pd()[k];
            if pc * pd > NODE_TOL_COMP {
                let overlap = pc.min(pd);
                if best.map_or(true, |(_, _, b)| overlap > b) {
                    best = Some((i, k, overlap));
                }
            }
        }
    }
    best.map(|(i, k, _)| (i, k)).ok_or(BnbError::AllComplementary)
}

/// Exact-model relaxation for a mode assignment: true-trajectory SoC rows
/// (both bounds), power boxes with the fixed side's upper bound at zero,
/// and the cutting plane. Variable layout matches the dispatch QP.
///
/// Row layout per battery `i` (base `4*T*i`): `T` trajectory rows, `T`
/// charge boxes, `T` discharge boxes, `T` cutting-plane rows.
pub fn build_exact_relaxation(
    problem: &DispatchProblem,
    modes: &ModeAssignment,
) -> Result<QpProblem, BnbError> {
    let n_batt = problem.batteries().len();
    let t = problem.grid().steps;
    let dt = problem.grid().dt;
    let n = 2 * n_batt * t;
    let m = 4 * n_batt * t;

    let mut c = Matrix::zeros(m, n);
    let mut lower = vec![f64::NEG_INFINITY; m];
    let mut upper = vec![f64::INFINITY; m];

    for (i, spec) in problem.batteries().iter().enumerate() {
        let col_pc = 2 * t * i;
        let col_pd = col_pc + t;
        let row0 = 4 * t * i;

        for l in 0..t {
            let row = row0 + l;
            for k in 0..=l {
                c.set(row, col_pc + k, dt * spec.eta_c);
                c.set(row, col_pd + k, -dt / spec.eta_d);
            }
            lower[row] = -spec.e0;
            upper[row] = spec.e_max - spec.e0;
        }
        for k in 0..t {
            let row = row0 + t + k;
            c.set(row, col_pc + k, 1.0);
            lower[row] = 0.0;
            upper[row] =
                if modes.get(i, k) == Mode::DischargeOnly { 0.0 } else { spec.p_max };
        }
        for k in 0..t {
            let row = row0 + 2 * t + k;
            c.set(row, col_pd + k, 1.0);
            lower[row] = 0.0;
            upper[row] = if modes.get(i, k) == Mode::ChargeOnly { 0.0 } else { spec.p_max };
        }
        for k in 0..t {
            let row = row0 + 3 * t + k;
            c.set(row, col_pc + k, 1.0);
            c.set(row, col_pd + k, 1.0);
            upper[row] = spec.p_max;
        }
    }

    let (p, q) = tracking_cost(problem);
    Ok(QpProblem::new(p, q, c, lower, upper)?)
}

/// Node objectives carry the dispatch regularization (without it, identical
/// batteries make the per-battery split non-unique and the tree drowns in
/// symmetric subtrees). Bounds stay valid by subtracting the largest value
/// the regularization term can take over the box constraints.
fn regularization_slack(problem: &DispatchProblem) -> f64 {
    // the tracking Hessian's largest entry is 2 by construction
    let reg_abs = problem.regularization_eps() * 2.0;
    let t = problem.grid().steps as f64;
    let norm_sq_max: f64 =
        problem.batteries().iter().map(|b| 2.0 * t * b.p_max * b.p_max).sum();
    reg_abs * norm_sq_max
}

fn apply_modes(qp: &mut QpProblem, problem: &DispatchProblem, modes: &ModeAssignment) {
    let t = problem.grid().steps;
    for (i, spec) in problem.batteries().iter().enumerate() {
        let row0 = 4 * t * i;
        for k in 0..t {
            let pc_up = if modes.get(i, k) == Mode::DischargeOnly { 0.0 } else { spec.p_max };
            let pd_up = if modes.get(i, k) == Mode::ChargeOnly { 0.0 } else { spec.p_max };
            qp.set_row_bounds(row0 + t + k, 0.0, pc_up);
            qp.set_row_bounds(row0 + 2 * t + k, 0.0, pd_up);
        }
    }
}

/// Tracking objective of a set of schedules, kW^2 summed.
fn tracking_objective(problem: &DispatchProblem, schedules: &[Schedule]) -> f64 {
    let t = problem.grid().steps;
    let mut fleet = vec![0.0; t];
    for sched in schedules {
        for (k, f) in fleet.iter_mut().enumerate() {
            *f += sched.pc()[k] - sched.pd()[k];
        }
    }
    problem
        .reference()
        .iter()
        .zip(&fleet)
        .map(|(r, s)| (r - s) * (r - s))
        .sum()
}

/// Shrink factors below this leave the node value attained for all
/// practical purposes: the node may be fathomed.
const REPAIR_NEGLIGIBLE: f64 = 1e-7;

/// Relative slack subtracted from measured node objectives wherever they
/// act as bounds, covering the node solver's own accuracy.
const BOUND_NOISE_REL: f64 = 1e-6;

/// Fat bound slack for nodes whose relaxation ran out of iterations.
const BOUND_NOISE_LOOSE_REL: f64 = 1e-3;

fn noise_margin(value: f64) -> f64 {
    BOUND_NOISE_REL * value.abs().max(1.0)
}

/// Split a node solution into an exactly complementary schedule and certify
/// it against the true model. Solver-tolerance SoC violations are repaired
/// by shrinking the offending battery's schedule toward zero (which keeps
/// every power constraint and complementarity intact). Returns the
/// certified schedules and whether the repair was negligible — only then
/// does the candidate attain the node value and permit fathoming. `None`
/// means certification failed even after repair.
fn certified_candidate(
    problem: &DispatchProblem,
    schedules: &[Schedule],
) -> Result<Option<(Vec<Schedule>, bool)>, BnbError> {
    let grid = problem.grid();
    let mut out = Vec::with_capacity(schedules.len());
    let mut worst_theta = 0.0f64;
    for (i, sched) in schedules.iter().enumerate() {
        let spec = &problem.batteries()[i];
        let pair = split_net(&net_of(sched));
        let realized = simulate_standard(spec, grid, &pair)?;
        let report = check_soc_limits(&realized, spec, CERT_TOL);
        if report.passed {
            out.push(pair);
            continue;
        }
        // shrink factor removing the worst excursion
        let mut theta = 0.0f64;
        for e in realized.energy() {
            if *e > spec.e_max {
                theta = theta.max((e - spec.e_max) / (e - spec.e0));
            } else if *e < 0.0 {
                theta = theta.max(-e / (spec.e0 - e));
            }
        }
        worst_theta = worst_theta.max(theta);
        let scale = (1.0 - theta * (1.0 + 1e-9)).clamp(0.0, 1.0);
        let repaired = Schedule::new(
            pair.pc().iter().map(|v| v * scale).collect(),
            pair.pd().iter().map(|v| v * scale).collect(),
        )?;
        let realized = simulate_standard(spec, grid, &repaired)?;
        if !check_soc_limits(&realized, spec, CERT_TOL).passed {
            return Ok(None);
        }
        out.push(repaired);
    }
    Ok(Some((out, worst_theta <= REPAIR_NEGLIGIBLE)))
}

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    modes: ModeAssignment,
    warm_x: Vec<f64>,
    warm_y: Vec<f64>,
}

/// Exact dispatch via branch-and-bound. Depth-first until the first
/// incumbent, then best-bound. Deterministic: identical inputs and settings
/// explore identical trees.
pub fn solve_exact_bnb(
    problem: &DispatchProblem,
    settings: &BnbSettings,
) -> Result<BnbResult, BnbError> {
    let start = Instant::now();
    let n_batt = problem.batteries().len();
    let t = problem.grid().steps;
    let mut qp = build_exact_relaxation(problem, &ModeAssignment::all_free(n_batt, t))?;

    let mut trace = settings.trace.then(Vec::new);
    // seed the incumbent with the robust dispatch solution: its split net
    // power is realizable by construction and prunes most of the tree that
    // a cold search would wade through
    let mut incumbent: Option<(Vec<Schedule>, f64)> = solve_rbd(problem, &settings.qp)
        .ok()
        .and_then(|r| {
            let schedules: Vec<Schedule> =
                (0..r.num_batteries()).map(|i| r.schedule(i).clone()).collect();
            certified_candidate(problem, &schedules).ok().flatten()
        })
        .map(|(candidate, _)| {
            let obj = tracking_objective(problem, &candidate);
            (candidate, obj)
        });
    let mut nodes_explored = 0usize;
    let mut next_id = 1usize;
    let mut total_iterations = 0usize;
    let mut hit_node_limit = false;

    let mut open = vec![Node {
        id: 0,
        depth: 0,
        bound: f64::NEG_INFINITY,
        modes: ModeAssignment::all_free(n_batt, t),
        warm_x: vec![0.0; qp.num_vars()],
        warm_y: vec![0.0; qp.num_constraints()],
    }];

    let gap_of = |inc: f64, bound: f64| (inc - bound).max(0.0) / inc.abs().max(1.0);
    let best_open_bound =
        |open: &[Node]| open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);

    while let Some(node) = pop_next(&mut open, incumbent.is_some()) {
        if let Some((_, inc_obj)) = &incumbent {
            // subtree cannot improve the incumbent
            if node.bound >= inc_obj - noise_margin(*inc_obj) {
                continue;
            }
            let bound = best_open_bound(&open).min(node.bound);
            if gap_of(*inc_obj, bound) <= settings.gap_tol {
                open.push(node);
                break;
            }
        }
        if nodes_explored >= settings.node_limit {
            open.push(node);
            hit_node_limit = true;
            break;
        }

        apply_modes(&mut qp, problem, &node.modes);
        let sol = solve_qp_warm(&qp, &settings.qp, &node.warm_x, &node.warm_y)?;
        if sol.status == SolveStatus::PrimalInfeasible {
            // cannot happen for a valid problem (the zero schedule is
            // always feasible); surface it loudly
            return Err(BnbError::NodeSolve { status: sol.status });
        }
        // an exhausted node still yields an honest bound, just with a much
        // wider uncertainty margin, and must not fathom its subtree
        let converged = sol.status == SolveStatus::Optimal;
        nodes_explored += 1;
        total_iterations += sol.iterations;
        let raw_value = qp.objective(&sol.x) + problem.objective_constant();
        let margin_rel = if converged { BOUND_NOISE_REL } else { BOUND_NOISE_LOOSE_REL };
        let node_value =
            raw_value - margin_rel * raw_value.abs().max(1.0) - regularization_slack(problem);
        if let Some(rows) = trace.as_mut() {
            rows.push(NodeTraceRow {
                node_id: node.id,
                depth: node.depth,
                bound: node_value,
                incumbent: incumbent.as_ref().map(|(_, o)| *o),
            });
        }
        if let Some((_, inc_obj)) = &incumbent {
            if node_value >= inc_obj - noise_margin(*inc_obj) {
                continue;
            }
        }

        let schedules = extract_schedules(problem, &sol.x);
        if let Some((candidate, clean)) = certified_candidate(problem, &schedules)? {
            let obj = tracking_objective(problem, &candidate);
            if incumbent.as_ref().map_or(true, |(_, best)| obj < *best) {
                incumbent = Some((candidate, obj));
            }
            if clean && converged {
                // net power is preserved by the split, so the candidate
                // attains the node value exactly: fathom
                continue;
            }
            // repaired or unconverged candidates are only a heuristic;
            // keep branching
        }

        match branch_select(&schedules) {
            Ok((bi, bk)) => {
                let pc = schedules[bi].pc()[bk];
                let pd = schedules[bi].pd()[bk];
                let mut push = |mode: Mode| {
                    let mut modes = node.modes.clone();
                    modes.set(bi, bk, mode);
                    open.push(Node {
                        id: next_id,
                        depth: node.depth + 1,
                        bound: node_value,
                        modes,
                        warm_x: sol.x.clone(),
                        warm_y: sol.y.clone(),
                    });
                    next_id += 1;
                };
                // explore the heavier side first (LIFO pops the last push)
                if pc >= pd {
                    push(Mode::DischargeOnly);
                    push(Mode::ChargeOnly);
                } else {
                    push(Mode::ChargeOnly);
                    push(Mode::DischargeOnly);
                }
            }
            Err(BnbError::AllComplementary) => {
                // numerically integral but the split failed certification
                // beyond repair; the subtree holds nothing better than the
                // node value plus repair slack, so drop it
                continue;
            }
            Err(e) => return Err(e),
        }
    }

    let (schedules, incumbent_objective) = match incumbent {
        Some(pair) => pair,
        // the zero schedule is always exactly feasible
        None => {
            let zero = vec![Schedule::zero(t); n_batt];
            let obj = tracking_objective(problem, &zero);
            (zero, obj)
        }
    };

    let best_bound = best_open_bound(&open).min(incumbent_objective);
    let gap = gap_of(incumbent_objective, best_bound);
    let status = if hit_node_limit { BnbStatus::NodeLimit } else { BnbStatus::Optimal };

    let stats = SolverStats {
        iterations: total_iterations,
        status: SolveStatus::Optimal,
        solve_time: start.elapsed(),
    };
    let dispatch = DispatchResult::assemble(problem, schedules, stats)?;
    Ok(BnbResult {
        dispatch,
        nodes_explored,
        incumbent_objective,
        best_bound,
        gap,
        status,
        node_trace: trace,
    })
}

fn pop_next(open: &mut Vec<Node>, have_incumbent: bool) -> Option<Node> {
    if open.is_empty() {
        return None;
    }
    if !have_incumbent {
        return open.pop();
    }
    let mut best = 0;
    for i in 1..open.len() {
        let a = &open[i];
        let b = &open[best];
        if a.bound < b.bound || (a.bound == b.bound && a.id < b.id) {
            best = i;
        }
    }
    Some(open.swap_remove(best))
}

/// Global optimum by exhaustion: every charge-only/discharge-only pattern
/// over all `(battery, step)` slots is solved as a convex QP with the true
/// SoC limits. Only valid for `N*T <= 12` (4096 patterns).
pub fn enumerate_exact_small(problem: &DispatchProblem) -> Result<BnbResult, BnbError> {
    let start = Instant::now();
    let n_batt = problem.batteries().len();
    let t = problem.grid().steps;
    let slots = n_batt * t;
    if slots > 12 {
        return Err(BnbError::TooLarge { modes: 1u64 << slots.min(63) });
    }
    let mut modes = ModeAssignment::all_free(n_batt, t);
    let mut qp = build_exact_relaxation(problem, &modes)?;
    let settings = SolverSettings::default();

    let mut best: Option<(Vec<Schedule>, f64)> = None;
    let mut warm_x = vec![0.0; qp.num_vars()];
    let mut warm_y = vec![0.0; qp.num_constraints()];
    let mut total_iterations = 0usize;
    let patterns = 1u64 << slots;
    for pattern in 0..patterns {
        for slot in 0..slots {
            let mode = if pattern >> slot & 1 == 1 { Mode::ChargeOnly } else { Mode::DischargeOnly };
            modes.set(slot / t, slot % t, mode);
        }
        apply_modes(&mut qp, problem, &modes);
        let sol = solve_qp_warm(&qp, &settings, &warm_x, &warm_y)?;
        if sol.status != SolveStatus::Optimal {
            return Err(BnbError::NodeSolve { status: sol.status });
        }
        total_iterations += sol.iterations;
        warm_x = sol.x.clone();
        warm_y = sol.y.clone();
        let schedules = extract_schedules(problem, &sol.x);
        if let Some((candidate, _)) = certified_candidate(problem, &schedules)? {
            let obj = tracking_objective(problem, &candidate);
            if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                best = Some((candidate, obj));
            }
        }
    }

    // every pattern admits the zero schedule, so at least one certifies
    let (schedules, incumbent_objective) =
        best.expect("exhaustive enumeration found no feasible pattern");
    let stats = SolverStats {
        iterations: total_iterations,
        status: SolveStatus::Optimal,
        solve_time: start.elapsed(),
    };
    let dispatch = DispatchResult::assemble(problem, schedules, stats)?;
    Ok(BnbResult {
        dispatch,
        nodes_explored: patterns as usize,
        incumbent_objective,
        best_bound: incumbent_objective,
        gap: 0.0,
        status: BnbStatus::Optimal,
        node_trace: None,
    })
}
