//! Battery models and state-of-charge bookkeeping.
//!
//! Three models of the same physical battery live here:
//!
//! * the **standard** model: two inputs (charge, discharge power), separate
//!   efficiencies, and the complementarity rule that a battery cannot charge
//!   and discharge in the same step;
//! * the **relaxed** model: the same affine dynamics with the complementarity
//!   rule dropped, so simultaneous charge/discharge is admitted. Its
//!   trajectory never exceeds the standard one (it wastes energy round-tripping
//!   whatever the two inputs overlap on);
//! * the **simplified** model: a single net-power input and a single net
//!   efficiency `eta` in `[eta_c, 1/eta_d]`. Its trajectory never undercuts
//!   the standard one.
//!
//! Together the relaxed and simplified trajectories sandwich the true one,
//! which is what makes them usable as certified lower/upper SoC envelopes in
//! the dispatch formulation (see [`crate::dispatch`]). The closed-form
//! mismatch expressions and their worst-case bounds are implemented in
//! [`relaxed_mismatch`] and [`simplified_mismatch`].
//!
//! Units are kW, kWh, and hours throughout; `dt` converts power to energy.

use thiserror::Error;

use crate::linalg::Matrix;

/// Tolerance on `pc[k] * pd[k]` (kW^2) below which a schedule is admitted as
/// complementarity-satisfying. `split_net` produces exact zeros; the slack
/// only exists for schedules that went through floating arithmetic.
pub const TOL_COMP: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BatteryError {
    #[error("invalid battery spec: {0}")]
    InvalidSpec(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("complementarity violated at step {step}: pc*pd = {product} kW^2")]
    ComplementarityViolation { step: usize, product: f64 },
    #[error("power bound violated at step {step}: {value} kW outside [{lo}, {hi}]")]
    BoundViolation { step: usize, value: f64, lo: f64, hi: f64 },
    #[error("length mismatch: expected {expected} steps, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("net efficiency {eta} outside [{min}, {max}]")]
    EtaOutOfRange { eta: f64, min: f64, max: f64 },
}

/// Physical battery parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatterySpec {
    /// Power limit per direction, kW.
    pub p_max: f64,
    /// Energy capacity, kWh.
    pub e_max: f64,
    /// Charging efficiency in (0, 1].
    pub eta_c: f64,
    /// Discharging efficiency in (0, 1].
    pub eta_d: f64,
    /// Initial stored energy, kWh.
    pub e0: f64,
}

impl BatterySpec {
    pub fn new(p_max: f64, e_max: f64, eta_c: f64, eta_d: f64, e0: f64) -> Result<Self, BatteryError> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(BatteryError::InvalidSpec(format!("p_max must be positive, got {p_max}")));
        }
        if !(e_max.is_finite() && e_max > 0.0) {
            return Err(BatteryError::InvalidSpec(format!("e_max must be positive, got {e_max}")));
        }
        if !(eta_c.is_finite() && eta_c > 0.0 && eta_c <= 1.0) {
            return Err(BatteryError::InvalidSpec(format!("eta_c must be in (0, 1], got {eta_c}")));
        }
        if !(eta_d.is_finite() && eta_d > 0.0 && eta_d <= 1.0) {
            return Err(BatteryError::InvalidSpec(format!("eta_d must be in (0, 1], got {eta_d}")));
        }
        if !(e0.is_finite() && (0.0..=e_max).contains(&e0)) {
            return Err(BatteryError::InvalidSpec(format!(
                "e0 must be in [0, {e_max}], got {e0}"
            )));
        }
        Ok(BatterySpec { p_max, e_max, eta_c, eta_d, e0 })
    }
}

/// Discrete horizon: number of steps and step width in hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, dt: f64) -> Result<Self, BatteryError> {
        if steps == 0 {
            return Err(BatteryError::InvalidGrid("steps must be >= 1".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(BatteryError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        Ok(TimeGrid { steps, dt })
    }
}

/// Lower-triangular cumulative-sum operator: entry `dt` at `(l, k)` for
/// `l >= k`, zero above the diagonal. Row `l` of `A*x` is
/// `dt * sum_{k<=l} x[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulationMatrix {
    dt: f64,
    dense: Matrix,
}

impl AccumulationMatrix {
    pub fn new(grid: &TimeGrid) -> Self {
        let t = grid.steps;
        let mut dense = Matrix::zeros(t, t);
        for l in 0..t {
            for k in 0..=l {
                dense.set(l, k, grid.dt);
            }
        }
        AccumulationMatrix { dt: grid.dt, dense }
    }

    pub fn dense(&self) -> &Matrix {
        &self.dense
    }

    pub fn steps(&self) -> usize {
        self.dense.rows()
    }

    /// `A * x` via the dense matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.dense.matvec(x)
    }

    /// `A * x` via the running-sum recurrence. Agrees with [`Self::apply`]
    /// to tight floating tolerance (tested); used where O(T) matters.
    pub fn apply_running(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut acc = 0.0;
        for v in x {
            acc += self.dt * v;
            out.push(acc);
        }
        out
    }
}

/// Convenience wrapper matching the operation map: builds the accumulation
/// matrix for a grid.
pub fn accumulation_matrix(grid: &TimeGrid) -> AccumulationMatrix {
    AccumulationMatrix::new(grid)
}

/// Two-input power schedule: charge and discharge sequences, kW.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pc: Vec<f64>,
    pd: Vec<f64>,
}

impl Schedule {
    pub fn new(pc: Vec<f64>, pd: Vec<f64>) -> Result<Self, BatteryError> {
        if pc.len() != pd.len() {
            return Err(BatteryError::LengthMismatch { expected: pc.len(), got: pd.len() });
        }
        for (k, v) in pc.iter().chain(pd.iter()).enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(BatteryError::InvalidSchedule(format!(
                    "entry {k} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Schedule { pc, pd })
    }

    pub fn zero(steps: usize) -> Self {
        Schedule { pc: vec![0.0; steps], pd: vec![0.0; steps] }
    }

    pub fn len(&self) -> usize {
        self.pc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pc.is_empty()
    }

    pub fn pc(&self) -> &[f64] {
        &self.pc
    }

    pub fn pd(&self) -> &[f64] {
        &self.pd
    }
}

/// Net charging power sequence, kW; positive entries charge the battery.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSchedule {
    pb: Vec<f64>,
}

impl NetSchedule {
    pub fn new(pb: Vec<f64>) -> Result<Self, BatteryError> {
        for (k, v) in pb.iter().enumerate() {
            if !v.is_finite() {
                return Err(BatteryError::InvalidSchedule(format!(
                    "net entry {k} must be finite, got {v}"
                )));
            }
        }
        Ok(NetSchedule { pb })
    }

    pub fn len(&self) -> usize {
        self.pb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pb.is_empty()
    }

    pub fn pb(&self) -> &[f64] {
        &self.pb
    }
}

/// Which model produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Standard,
    Relaxed,
    Simplified,
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelTag::Standard => "standard",
            ModelTag::Relaxed => "relaxed",
            ModelTag::Simplified => "simplified",
        };
        f.write_str(s)
    }
}

/// Post-step stored-energy sequence: entry `k` holds the SoC after input
/// step `k` has been applied. The initial SoC lives in the producing spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SocTrajectory {
    e: Vec<f64>,
    model: ModelTag,
}

impl SocTrajectory {
    pub fn new(e: Vec<f64>, model: ModelTag) -> Self {
        SocTrajectory { e, model }
    }

    pub fn energy(&self) -> &[f64] {
        &self.e
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), BatteryError> {
    if expected != got {
        Err(BatteryError::LengthMismatch { expected, got })
    } else {
        Ok(())
    }
}

fn check_range(seq: &[f64], lo: f64, hi: f64) -> Result<(), BatteryError> {
    for (step, v) in seq.iter().enumerate() {
        if !(v.is_finite() && *v >= lo && *v <= hi) {
            return Err(BatteryError::BoundViolation { step, value: *v, lo, hi });
        }
    }
    Ok(())
}

fn affine_trajectory(spec: &BatterySpec, grid: &TimeGrid, pc: &[f64], pd: &[f64], tag: ModelTag) -> SocTrajectory {
    let mut e = Vec::with_capacity(grid.steps);
    let mut acc = spec.e0;
    for k in 0..grid.steps {
        acc += grid.dt * (spec.eta_c * pc[k] - pd[k] / spec.eta_d);
        e.push(acc);
    }
    SocTrajectory::new(e, tag)
}

/// Simulate the standard two-input model. The schedule must satisfy
/// per-step complementarity (`pc[k]*pd[k] <= TOL_COMP`) and stay within
/// `[0, p_max]`. The result is not clamped: SoC limit checking is a
/// separate concern ([`check_soc_limits`]).
pub fn simulate_standard(
    spec: &BatterySpec,
    grid: &TimeGrid,
    sched: &Schedule,
) -> Result<SocTrajectory, BatteryError> {
    check_len(grid.steps, sched.len())?;
    check_range(sched.pc(), 0.0, spec.p_max)?;
    check_range(sched.pd(), 0.0, spec.p_max)?;
    for k in 0..sched.len() {
        let product = sched.pc()[k] * sched.pd()[k];
        if product > TOL_COMP {
            return Err(BatteryError::ComplementarityViolation { step: k, product });
        }
    }
    Ok(affine_trajectory(spec, grid, sched.pc(), sched.pd(), ModelTag::Standard))
}

/// Simulate the relaxed model: identical affine map, complementarity not
/// required.
pub fn simulate_relaxed(
    spec: &BatterySpec,
    grid: &TimeGrid,
    sched: &Schedule,
) -> Result<SocTrajectory, BatteryError> {
    check_len(grid.steps, sched.len())?;
    check_range(sched.pc(), 0.0, spec.p_max)?;
    check_range(sched.pd(), 0.0, spec.p_max)?;
    Ok(affine_trajectory(spec, grid, sched.pc(), sched.pd(), ModelTag::Relaxed))
}

/// Simulate the simplified single-input model with net efficiency `eta`.
pub fn simulate_simplified(
    spec: &BatterySpec,
    grid: &TimeGrid,
    net: &NetSchedule,
    eta: f64,
) -> Result<SocTrajectory, BatteryError> {
    check_len(grid.steps, net.len())?;
    check_eta(spec, eta)?;
    check_range(net.pb(), -spec.p_max, spec.p_max)?;
    let mut e = Vec::with_capacity(grid.steps);
    let mut acc = spec.e0;
    for k in 0..grid.steps {
        acc += grid.dt * eta * net.pb()[k];
        e.push(acc);
    }
    Ok(SocTrajectory::new(e, ModelTag::Simplified))
}

fn check_eta(spec: &BatterySpec, eta: f64) -> Result<(), BatteryError> {
    let min = spec.eta_c;
    let max = 1.0 / spec.eta_d;
    if !(eta.is_finite() && eta >= min && eta <= max) {
        return Err(BatteryError::EtaOutOfRange { eta, min, max });
    }
    Ok(())
}

/// The net efficiency that equalizes the simplified model's charge- and
/// discharge-side mismatch slopes, together with that common slope `alpha`:
/// `eta = (eta_c + 1/eta_d) / 2`, `alpha = (1/eta_d - eta_c) / 2`.
pub fn symmetric_eta(spec: &BatterySpec) -> (f64, f64) {
    let inv_d = 1.0 / spec.eta_d;
    let eta = (spec.eta_c + inv_d) / 2.0;
    let alpha = (inv_d - spec.eta_c) / 2.0;
    (eta, alpha)
}

/// Split a net schedule into its positive/negative parts:
/// `pc = max(0, pb)`, `pd = max(0, -pb)`. The result satisfies exact
/// complementarity and `pc - pd == pb` elementwise.
pub fn split_net(net: &NetSchedule) -> Schedule {
    let pc = net.pb().iter().map(|v| v.max(0.0)).collect();
    let pd = net.pb().iter().map(|v| (-v).max(0.0)).collect();
    Schedule { pc, pd }
}

/// Net power of a two-input schedule: `pb = pc - pd` elementwise.
pub fn net_of(sched: &Schedule) -> NetSchedule {
    let pb = sched
        .pc()
        .iter()
        .zip(sched.pd())
        .map(|(c, d)| c - d)
        .collect();
    NetSchedule { pb }
}

/// Closed-form mismatch between the standard trajectory (of the split net
/// power) and the relaxed trajectory of `relaxed_sched`:
/// `A * (1/eta_d - eta_c) * min(pc, pd)` elementwise. Always nonnegative.
pub fn relaxed_mismatch(
    spec: &BatterySpec,
    grid: &TimeGrid,
    relaxed_sched: &Schedule,
) -> Result<Vec<f64>, BatteryError> {
    check_len(grid.steps, relaxed_sched.len())?;
    let slope = 1.0 / spec.eta_d - spec.eta_c;
    let overlap: Vec<f64> = relaxed_sched
        .pc()
        .iter()
        .zip(relaxed_sched.pd())
        .map(|(c, d)| slope * c.min(*d))
        .collect();
    Ok(AccumulationMatrix::new(grid).apply(&overlap))
}

/// Closed-form mismatch between the simplified trajectory and the standard
/// trajectory of the split net power:
/// `A * [(eta - eta_c) * max(0, pb) + (eta - 1/eta_d) * min(0, pb)]`.
/// With the symmetric `eta` this reduces to `alpha * A * |pb|`.
pub fn simplified_mismatch(
    spec: &BatterySpec,
    grid: &TimeGrid,
    net: &NetSchedule,
    eta: f64,
) -> Result<Vec<f64>, BatteryError> {
    check_len(grid.steps, net.len())?;
    check_eta(spec, eta)?;
    let up = eta - spec.eta_c;
    let down = eta - 1.0 / spec.eta_d;
    let integrand: Vec<f64> = net
        .pb()
        .iter()
        .map(|v| up * v.max(0.0) + down * v.min(0.0))
        .collect();
    Ok(AccumulationMatrix::new(grid).apply(&integrand))
}

/// Outcome of an SoC limit check.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport {
    pub passed: bool,
    /// First index where the trajectory leaves `[-tol, e_max + tol]`.
    pub first_violation: Option<usize>,
    /// Largest undershoot below 0, kWh (0 if none).
    pub worst_below: f64,
    /// Largest overshoot above `e_max`, kWh (0 if none).
    pub worst_above: f64,
}

/// Check a trajectory against the battery's energy limits with slack `tol`
/// (kWh). Applies to the post-step entries only; the initial SoC is a
/// [`BatterySpec`] invariant.
pub fn check_soc_limits(traj: &SocTrajectory, spec: &BatterySpec, tol: f64) -> LimitReport {
    let mut first = None;
    let mut below = 0.0f64;
    let mut above = 0.0f64;
    for (k, e) in traj.energy().iter().enumerate() {
        let under = -e;
        let over = e - spec.e_max;
        if under > below {
            below = under;
        }
        if over > above {
            above = over;
        }
        if (under > tol || over > tol) && first.is_none() {
            first = Some(k);
        }
    }
    LimitReport {
        passed: first.is_none(),
        first_violation: first,
        worst_below: below,
        worst_above: above,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_v() -> BatterySpec {
        // the experiment battery: 15 kW, 60 kWh, eta_c = eta_d = 0.95
        BatterySpec::new(15.0, 60.0, 0.95, 0.95, 30.0).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng) -> BatterySpec {
        let p_max = rng.random_range(1.0..50.0);
        let e_max = rng.random_range(10.0..200.0);
        let eta_c = rng.random_range(0.5..1.0);
        let eta_d = rng.random_range(0.5..1.0);
        let e0 = rng.random_range(0.0..e_max);
        BatterySpec::new(p_max, e_max, eta_c, eta_d, e0).unwrap()
    }

    fn random_relaxed_schedule(rng: &mut ChaCha8Rng, spec: &BatterySpec, steps: usize) -> Schedule {
        let pc = (0..steps).map(|_| rng.random_range(0.0..spec.p_max)).collect();
        let pd = (0..steps).map(|_| rng.random_range(0.0..spec.p_max)).collect();
        Schedule::new(pc, pd).unwrap()
    }

    #[test]
    fn accumulation_matrix_small_grids() {
        let a = AccumulationMatrix::new(&TimeGrid::new(2, 1.0).unwrap());
        assert_eq!(a.dense().row(0), &[1.0, 0.0]);
        assert_eq!(a.dense().row(1), &[1.0, 1.0]);

        let a = AccumulationMatrix::new(&TimeGrid::new(3, 0.5).unwrap());
        assert_eq!(a.dense().row(0), &[0.5, 0.0, 0.0]);
        assert_eq!(a.dense().row(1), &[0.5, 0.5, 0.0]);
        assert_eq!(a.dense().row(2), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn accumulation_matrix_row_sums() {
        // constant 1 kW over 24 one-hour steps accumulates to 24 kWh
        let grid = TimeGrid::new(24, 1.0).unwrap();
        let a = AccumulationMatrix::new(&grid);
        let ones = vec![1.0; 24];
        let e = a.apply(&ones);
        assert_abs_diff_eq!(e[23], 24.0, epsilon = 1e-12);
        for (l, v) in e.iter().enumerate() {
            assert_abs_diff_eq!(*v, (l + 1) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_and_running_sum_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let steps = rng.random_range(1..40);
            let dt = rng.random_range(0.25..2.0);
            let grid = TimeGrid::new(steps, dt).unwrap();
            let a = AccumulationMatrix::new(&grid);
            let x: Vec<f64> = (0..steps).map(|_| rng.random_range(-15.0..15.0)).collect();
            let dense = a.apply(&x);
            let running = a.apply_running(&x);
            for (d, r) in dense.iter().zip(&running) {
                assert_abs_diff_eq!(d, r, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn standard_single_step_charge() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let sched = Schedule::new(vec![10.0], vec![0.0]).unwrap();
        let traj = simulate_standard(&spec_v(), &grid, &sched).unwrap();
        assert_abs_diff_eq!(traj.energy()[0], 39.5, epsilon = 1e-12);
    }

    #[test]
    fn standard_single_step_discharge() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let sched = Schedule::new(vec![0.0], vec![10.0]).unwrap();
        let traj = simulate_standard(&spec_v(), &grid, &sched).unwrap();
        assert_abs_diff_eq!(traj.energy()[0], 30.0 - 10.0 / 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(traj.energy()[0], 19.473684, epsilon = 1e-6);
    }

    #[test]
    fn zero_schedule_keeps_soc() {
        let grid = TimeGrid::new(8, 0.5).unwrap();
        let traj = simulate_standard(&spec_v(), &grid, &Schedule::zero(8)).unwrap();
        for e in traj.energy() {
            assert_abs_diff_eq!(*e, 30.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn standard_rejects_simultaneous_charge_discharge() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let sched = Schedule::new(vec![5.0], vec![5.0]).unwrap();
        let err = simulate_standard(&spec_v(), &grid, &sched).unwrap_err();
        assert!(matches!(err, BatteryError::ComplementarityViolation { step: 0, .. }));
    }

    #[test]
    fn standard_rejects_out_of_bounds_power() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let sched = Schedule::new(vec![15.5], vec![0.0]).unwrap();
        let err = simulate_standard(&spec_v(), &grid, &sched).unwrap_err();
        assert!(matches!(err, BatteryError::BoundViolation { step: 0, .. }));
    }

    #[test]
    fn standard_rejects_length_mismatch() {
        let grid = TimeGrid::new(3, 1.0).unwrap();
        let sched = Schedule::zero(2);
        let err = simulate_standard(&spec_v(), &grid, &sched).unwrap_err();
        assert_eq!(err, BatteryError::LengthMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn relaxed_net_zero_loses_energy() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let sched = Schedule::new(vec![5.0], vec![5.0]).unwrap();
        let traj = simulate_relaxed(&spec_v(), &grid, &sched).unwrap();
        assert_abs_diff_eq!(traj.energy()[0], 30.0 + 0.95 * 5.0 - 5.0 / 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(traj.energy()[0], 29.486842, epsilon = 1e-6);
    }

    #[test]
    fn relaxed_matches_standard_on_complementary_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = TimeGrid::new(12, 1.0).unwrap();
        for _ in 0..50 {
            let spec = random_spec(&mut rng);
            let pb: Vec<f64> = (0..12).map(|_| rng.random_range(-spec.p_max..spec.p_max)).collect();
            let sched = split_net(&NetSchedule::new(pb).unwrap());
            let std = simulate_standard(&spec, &grid, &sched).unwrap();
            let rel = simulate_relaxed(&spec, &grid, &sched).unwrap();
            for (a, b) in std.energy().iter().zip(rel.energy()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn relaxed_half_power_overlap_drop_rate() {
        // pc = pd = p_max/2 drains the battery linearly; per-step drop is
        // dt * p_max/2 * (1/eta_d - eta_c), which is the worst case under
        // the cutting plane pc + pd <= p_max.
        let spec = spec_v();
        let grid = TimeGrid::new(6, 1.0).unwrap();
        let half = vec![spec.p_max / 2.0; 6];
        let sched = Schedule::new(half.clone(), half).unwrap();
        let traj = simulate_relaxed(&spec, &grid, &sched).unwrap();
        let drop = (1.0 / spec.eta_d - spec.eta_c) * spec.p_max / 2.0;
        let mut prev = spec.e0;
        for e in traj.energy() {
            assert_abs_diff_eq!(prev - e, drop, epsilon = 1e-12);
            assert!(*e < prev);
            prev = *e;
        }
    }

    #[test]
    fn simplified_single_discharge_step() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let net = NetSchedule::new(vec![-10.0]).unwrap();
        let traj = simulate_simplified(&spec_v(), &grid, &net, 1.0013158).unwrap();
        assert_abs_diff_eq!(traj.energy()[0], 30.0 - 10.0 * 1.0013158, epsilon = 1e-12);
        assert_abs_diff_eq!(traj.energy()[0], 19.986842, epsilon = 1e-6);
    }

    #[test]
    fn simplified_idle_keeps_soc() {
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let (eta, _) = symmetric_eta(&spec_v());
        let net = NetSchedule::new(vec![0.0; 5]).unwrap();
        let traj = simulate_simplified(&spec_v(), &grid, &net, eta).unwrap();
        for e in traj.energy() {
            assert_abs_diff_eq!(*e, 30.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn simplified_rejects_eta_out_of_range() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let net = NetSchedule::new(vec![0.0]).unwrap();
        let err = simulate_simplified(&spec_v(), &grid, &net, 0.5).unwrap_err();
        assert!(matches!(err, BatteryError::EtaOutOfRange { .. }));
        let err = simulate_simplified(&spec_v(), &grid, &net, 1.2).unwrap_err();
        assert!(matches!(err, BatteryError::EtaOutOfRange { .. }));
    }

    #[test]
    fn lossless_battery_models_coincide() {
        let spec = BatterySpec::new(10.0, 50.0, 1.0, 1.0, 20.0).unwrap();
        let grid = TimeGrid::new(10, 0.5).unwrap();
        let (eta, alpha) = symmetric_eta(&spec);
        assert_eq!(eta, 1.0);
        assert_eq!(alpha, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pb: Vec<f64> = (0..10).map(|_| rng.random_range(-10.0..10.0)).collect();
            let net = NetSchedule::new(pb).unwrap();
            let pair = split_net(&net);
            let std = simulate_standard(&spec, &grid, &pair).unwrap();
            let rel = simulate_relaxed(&spec, &grid, &pair).unwrap();
            let simp = simulate_simplified(&spec, &grid, &net, eta).unwrap();
            for k in 0..10 {
                assert_abs_diff_eq!(std.energy()[k], rel.energy()[k], epsilon = 1e-12);
                assert_abs_diff_eq!(std.energy()[k], simp.energy()[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_eta_experiment_values() {
        let (eta, alpha) = symmetric_eta(&spec_v());
        assert_abs_diff_eq!(eta, 1.0013, epsilon = 5e-5);
        assert_abs_diff_eq!(alpha, 0.0513, epsilon = 5e-5);
        // defining identity: eta - eta_c == 1/eta_d - eta
        assert_abs_diff_eq!(eta - 0.95, 1.0 / 0.95 - eta, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_eta_asymmetric_efficiencies() {
        let spec = BatterySpec::new(1.0, 1.0, 0.9, 0.8, 0.5).unwrap();
        let (eta, alpha) = symmetric_eta(&spec);
        assert_abs_diff_eq!(eta, 1.075, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha, 0.175, epsilon = 1e-12);
    }

    #[test]
    fn split_net_examples() {
        let net = NetSchedule::new(vec![3.0, -2.0, 0.0]).unwrap();
        let sched = split_net(&net);
        assert_eq!(sched.pc(), &[3.0, 0.0, 0.0]);
        assert_eq!(sched.pd(), &[0.0, 2.0, 0.0]);

        let zero = split_net(&NetSchedule::new(vec![0.0; 4]).unwrap());
        assert_eq!(zero, Schedule::zero(4));
    }

    #[test]
    fn split_net_exact_complementarity_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let pb: Vec<f64> = (0..16).map(|_| rng.random_range(-20.0..20.0)).collect();
            let net = NetSchedule::new(pb.clone()).unwrap();
            let sched = split_net(&net);
            for k in 0..16 {
                assert_eq!(sched.pc()[k] * sched.pd()[k], 0.0);
                assert_eq!(sched.pc()[k] - sched.pd()[k], pb[k]);
            }
            assert_eq!(net_of(&sched).pb(), net.pb());
        }
    }

    #[test]
    fn split_is_pointwise_below_any_relaxed_preimage() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let spec = random_spec(&mut rng);
            let sched = random_relaxed_schedule(&mut rng, &spec, 6);
            let pair = split_net(&net_of(&sched));
            for k in 0..6 {
                assert!(pair.pc()[k] <= sched.pc()[k] + 1e-12);
                assert!(pair.pd()[k] <= sched.pd()[k] + 1e-12);
            }
        }
    }

    #[test]
    fn net_of_examples() {
        let sched = Schedule::new(vec![3.0, 0.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(net_of(&sched).pb(), &[3.0, -2.0]);
        let sched = Schedule::new(vec![5.0], vec![5.0]).unwrap();
        assert_eq!(net_of(&sched).pb(), &[0.0]);
    }

    #[test]
    fn relaxed_mismatch_zero_for_complementary_schedules() {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let sched = Schedule::new(vec![3.0, 0.0, 1.0, 0.0], vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        let dm = relaxed_mismatch(&spec_v(), &grid, &sched).unwrap();
        for v in dm {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn relaxed_mismatch_cutting_plane_worst_case() {
        let spec = spec_v();
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let half = vec![spec.p_max / 2.0; 5];
        let sched = Schedule::new(half.clone(), half).unwrap();
        let dm = relaxed_mismatch(&spec, &grid, &sched).unwrap();
        for (l, v) in dm.iter().enumerate() {
            let expect = (1.0 / spec.eta_d - spec.eta_c) * (l + 1) as f64 * grid.dt * spec.p_max / 2.0;
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn relaxed_mismatch_matches_simulator_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let spec = random_spec(&mut rng);
            let steps = rng.random_range(1..16);
            let grid = TimeGrid::new(steps, rng.random_range(0.25..2.0)).unwrap();
            let sched = random_relaxed_schedule(&mut rng, &spec, steps);
            let dm = relaxed_mismatch(&spec, &grid, &sched).unwrap();
            let standard = simulate_standard(&spec, &grid, &split_net(&net_of(&sched))).unwrap();
            let relaxed = simulate_relaxed(&spec, &grid, &sched).unwrap();
            for k in 0..steps {
                let direct = standard.energy()[k] - relaxed.energy()[k];
                assert_abs_diff_eq!(dm[k], direct, epsilon = 1e-9);
                assert!(dm[k] >= 0.0);
            }
        }
    }

    #[test]
    fn simplified_mismatch_constant_full_power() {
        let spec = spec_v();
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let (eta, alpha) = symmetric_eta(&spec);
        for sign in [1.0, -1.0] {
            let net = NetSchedule::new(vec![sign * spec.p_max; 4]).unwrap();
            let dm = simplified_mismatch(&spec, &grid, &net, eta).unwrap();
            for (l, v) in dm.iter().enumerate() {
                let expect = alpha * (l + 1) as f64 * grid.dt * spec.p_max;
                assert_abs_diff_eq!(*v, expect, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn simplified_mismatch_zero_for_idle_battery() {
        let grid = TimeGrid::new(3, 1.0).unwrap();
        let (eta, _) = symmetric_eta(&spec_v());
        let net = NetSchedule::new(vec![0.0; 3]).unwrap();
        let dm = simplified_mismatch(&spec_v(), &grid, &net, eta).unwrap();
        assert_eq!(dm, vec![0.0; 3]);
    }

    #[test]
    fn simplified_mismatch_matches_simulator_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..300 {
            let spec = random_spec(&mut rng);
            let steps = rng.random_range(1..16);
            let grid = TimeGrid::new(steps, rng.random_range(0.25..2.0)).unwrap();
            let pb: Vec<f64> = (0..steps).map(|_| rng.random_range(-spec.p_max..spec.p_max)).collect();
            let net = NetSchedule::new(pb).unwrap();
            // a random admissible eta, not just the symmetric one
            let eta = rng.random_range(spec.eta_c..(1.0 / spec.eta_d));
            let dm = simplified_mismatch(&spec, &grid, &net, eta).unwrap();
            let simp = simulate_simplified(&spec, &grid, &net, eta).unwrap();
            let standard = simulate_standard(&spec, &grid, &split_net(&net)).unwrap();
            for k in 0..steps {
                let direct = simp.energy()[k] - standard.energy()[k];
                assert_abs_diff_eq!(dm[k], direct, epsilon = 1e-9);
                assert!(dm[k] >= -1e-12);
            }
        }
    }

    #[test]
    fn mismatches_are_nonnegative_and_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let spec = random_spec(&mut rng);
            let steps = rng.random_range(1..20);
            let grid = TimeGrid::new(steps, 1.0).unwrap();
            let sched = random_relaxed_schedule(&mut rng, &spec, steps);
            let dm_r = relaxed_mismatch(&spec, &grid, &sched).unwrap();
            let (eta, _) = symmetric_eta(&spec);
            let dm_s = simplified_mismatch(&spec, &grid, &net_of(&sched), eta).unwrap();
            let mut prev_r = 0.0;
            let mut prev_s = 0.0;
            for k in 0..steps {
                assert!(dm_r[k] >= prev_r - 1e-12);
                assert!(dm_s[k] >= prev_s - 1e-12);
                prev_r = dm_r[k];
                prev_s = dm_s[k];
            }
        }
    }

    #[test]
    fn simulators_are_affine_in_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let spec = spec_v();
        let grid = TimeGrid::new(10, 1.0).unwrap();
        for _ in 0..100 {
            let x = random_relaxed_schedule(&mut rng, &spec, 10);
            let y = random_relaxed_schedule(&mut rng, &spec, 10);
            let w: f64 = rng.random_range(0.0..1.0);
            let mix = Schedule::new(
                x.pc().iter().zip(y.pc()).map(|(a, b)| w * a + (1.0 - w) * b).collect(),
                x.pd().iter().zip(y.pd()).map(|(a, b)| w * a + (1.0 - w) * b).collect(),
            )
            .unwrap();
            let ex = simulate_relaxed(&spec, &grid, &x).unwrap();
            let ey = simulate_relaxed(&spec, &grid, &y).unwrap();
            let em = simulate_relaxed(&spec, &grid, &mix).unwrap();
            for k in 0..10 {
                let combo = w * ex.energy()[k] + (1.0 - w) * ey.energy()[k];
                assert_abs_diff_eq!(em.energy()[k], combo, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sandwich_holds_on_random_schedules() {
        // the full 10k-case run lives in the acceptance suite; this is the
        // fast smoke version
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let spec = random_spec(&mut rng);
            let steps = rng.random_range(1..25);
            let grid = TimeGrid::new(steps, rng.random_range(0.25..2.0)).unwrap();
            let sched = random_relaxed_schedule(&mut rng, &spec, steps);
            let net = net_of(&sched);
            let pair = split_net(&net);
            let (eta, _) = symmetric_eta(&spec);
            let lower = simulate_relaxed(&spec, &grid, &sched).unwrap();
            let mid = simulate_standard(&spec, &grid, &pair).unwrap();
            let upper = simulate_simplified(&spec, &grid, &net, eta).unwrap();
            for k in 0..steps {
                assert!(lower.energy()[k] <= mid.energy()[k] + 1e-9);
                assert!(mid.energy()[k] <= upper.energy()[k] + 1e-9);
            }
        }
    }

    #[test]
    fn soc_per_step_change_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let spec = random_spec(&mut rng);
            let steps = rng.random_range(1..20);
            let grid = TimeGrid::new(steps, rng.random_range(0.25..2.0)).unwrap();
            let sched = random_relaxed_schedule(&mut rng, &spec, steps);
            let traj = simulate_relaxed(&spec, &grid, &sched).unwrap();
            let bound = spec.eta_c.max(1.0 / spec.eta_d) * grid.dt * spec.p_max;
            let mut prev = spec.e0;
            for e in traj.energy() {
                assert!((e - prev).abs() <= bound + 1e-9);
                prev = *e;
            }
        }
    }

    #[test]
    fn limit_check_passes_constant_trajectory() {
        let traj = SocTrajectory::new(vec![30.0; 10], ModelTag::Standard);
        let report = check_soc_limits(&traj, &spec_v(), 1e-9);
        assert!(report.passed);
        assert_eq!(report.first_violation, None);
        assert_eq!(report.worst_below, 0.0);
        assert_eq!(report.worst_above, 0.0);
    }

    #[test]
    fn limit_check_flags_overshoot() {
        let traj = SocTrajectory::new(vec![61.0], ModelTag::Standard);
        let report = check_soc_limits(&traj, &spec_v(), 1e-6);
        assert!(!report.passed);
        assert_eq!(report.first_violation, Some(0));
        assert_abs_diff_eq!(report.worst_above, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn limit_check_respects_tolerance() {
        let traj = SocTrajectory::new(vec![60.0 + 1e-8, -1e-8], ModelTag::Standard);
        assert!(check_soc_limits(&traj, &spec_v(), 1e-6).passed);
        assert!(!check_soc_limits(&traj, &spec_v(), 1e-9).passed);
    }

    #[test]
    fn spec_validation() {
        assert!(BatterySpec::new(0.0, 60.0, 0.9, 0.9, 0.0).is_err());
        assert!(BatterySpec::new(15.0, -1.0, 0.9, 0.9, 0.0).is_err());
        assert!(BatterySpec::new(15.0, 60.0, 0.0, 0.9, 0.0).is_err());
        assert!(BatterySpec::new(15.0, 60.0, 0.9, 1.1, 0.0).is_err());
        assert!(BatterySpec::new(15.0, 60.0, 0.9, 0.9, 61.0).is_err());
        assert!(BatterySpec::new(15.0, 60.0, 1.0, 1.0, 60.0).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0, 1.0).is_err());
        assert!(TimeGrid::new(1, 0.0).is_err());
        assert!(TimeGrid::new(1, 1.0).is_ok());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(Schedule::new(vec![-0.1], vec![0.0]).is_err());
        assert!(Schedule::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(NetSchedule::new(vec![f64::INFINITY]).is_err());
    }
}
