//! CSV emission and re-ingestion. All numeric columns use fixed decimal
//! format with nine fractional digits, so a write/read round trip preserves
//! values to 1e-9.

use std::path::{Path, PathBuf};

use crate::battery::{
    check_soc_limits, simulate_standard, split_net, BatterySpec, NetSchedule, SocTrajectory,
    TimeGrid,
};
use crate::bnb::NodeTraceRow;
use crate::dispatch::DispatchResult;

use super::HarnessError;

pub const PLOT_HEADER: &str =
    "step,pref_kw,pb_kw,pc_kw,pd_kw,e_relaxed_kwh,e_realized_kwh,e_simplified_kwh";

/// Write one CSV per battery with the reference, the optimized powers, and
/// the three SoC trajectories (lower envelope, realized, upper envelope).
/// A single battery writes exactly `path`; fleets get `_b<i>` suffixes.
/// Returns the written paths.
pub fn emit_plotdata(result: &DispatchResult, path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for i in 0..result.num_batteries() {
        let target = if result.num_batteries() == 1 {
            path.to_path_buf()
        } else {
            suffixed(path, &format!("_b{i}"))
        };
        std::fs::write(&target, battery_csv(result, i))?;
        written.push(target);
    }
    Ok(written)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn battery_csv(result: &DispatchResult, i: usize) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    let sched = result.schedule(i);
    let net = result.net(i);
    for k in 0..result.grid().steps {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            k,
            result.reference()[k],
            net.pb()[k],
            sched.pc()[k],
            sched.pd()[k],
            result.relaxed_envelope(i).energy()[k],
            result.realized_trajectory(i).energy()[k],
            result.simplified_envelope(i).energy()[k],
        ));
    }
    out
}

/// Trajectory export: `step_index, time_h, e_kwh, model_tag` where `time_h`
/// is the instant the post-step SoC is attained.
pub fn trajectory_csv(traj: &SocTrajectory, grid: &TimeGrid) -> String {
    let mut out = String::from("step_index,time_h,e_kwh,model_tag\n");
    for (k, e) in traj.energy().iter().enumerate() {
        out.push_str(&format!("{},{:.9},{:.9},{}\n", k, (k + 1) as f64 * grid.dt, e, traj.model()));
    }
    out
}

/// Per-node search trace: `node_id, depth, bound, incumbent`.
pub fn node_trace_csv(rows: &[NodeTraceRow]) -> String {
    let mut out = String::from("node_id,depth,bound,incumbent\n");
    for row in rows {
        let incumbent =
            row.incumbent.map(|v| format!("{v:.9}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:.9},{}\n", row.node_id, row.depth, row.bound, incumbent));
    }
    out
}

/// Columns of a per-battery dispatch CSV, read back.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub pref: Vec<f64>,
    pub pb: Vec<f64>,
    pub pc: Vec<f64>,
    pub pd: Vec<f64>,
    pub e_relaxed: Vec<f64>,
    pub e_realized: Vec<f64>,
    pub e_simplified: Vec<f64>,
}

pub fn read_plotdata(path: &Path) -> Result<PlotData, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, msg: String| HarnessError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".into()))?;
    if header.trim() != PLOT_HEADER {
        return Err(perr(1, format!("unexpected header {header:?}")));
    }
    let mut data = PlotData {
        pref: Vec::new(),
        pb: Vec::new(),
        pc: Vec::new(),
        pd: Vec::new(),
        e_relaxed: Vec::new(),
        e_realized: Vec::new(),
        e_simplified: Vec::new(),
    };
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(perr(idx + 1, format!("expected 8 columns, got {}", fields.len())));
        }
        let mut values = [0.0f64; 7];
        for (slot, field) in values.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|e| perr(idx + 1, format!("bad number {field:?}: {e}")))?;
        }
        data.pref.push(values[0]);
        data.pb.push(values[1]);
        data.pc.push(values[2]);
        data.pd.push(values[3]);
        data.e_relaxed.push(values[4]);
        data.e_realized.push(values[5]);
        data.e_simplified.push(values[6]);
    }
    if data.pref.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct PlotVerification {
    pub passed: bool,
    pub findings: Vec<String>,
}

/// Re-verify an emitted dispatch CSV against a battery spec: the recomputed
/// realized trajectory must match the file, stay within limits (slack
/// `tol`), and sit inside the recorded envelopes. Slack on file comparisons
/// covers the 1e-9 quantization of the CSV format.
pub fn verify_plotdata(
    data: &PlotData,
    spec: &BatterySpec,
    grid: &TimeGrid,
    tol: f64,
) -> Result<PlotVerification, HarnessError> {
    const QUANT: f64 = 1e-8;
    let mut findings = Vec::new();
    if data.pb.len() != grid.steps {
        findings.push(format!("{} rows for a {}-step horizon", data.pb.len(), grid.steps));
    } else {
        let net = NetSchedule::new(data.pb.clone())?;
        let realized = simulate_standard(spec, grid, &split_net(&net))?;
        for (k, (sim, file)) in realized.energy().iter().zip(&data.e_realized).enumerate() {
            if (sim - file).abs() > 1e-6 {
                findings.push(format!(
                    "step {k}: recomputed SoC {sim:.9} differs from file {file:.9}"
                ));
                break;
            }
        }
        let report = check_soc_limits(&realized, spec, tol);
        if !report.passed {
            findings.push(format!(
                "SoC limits violated (worst below {:.3e}, worst above {:.3e}, first at step {:?})",
                report.worst_below, report.worst_above, report.first_violation
            ));
        }
        for k in 0..grid.steps {
            if !(data.e_relaxed[k] <= data.e_realized[k] + QUANT
                && data.e_realized[k] <= data.e_simplified[k] + QUANT)
            {
                findings.push(format!("step {k}: envelope ordering violated"));
                break;
            }
        }
    }
    Ok(PlotVerification { passed: findings.is_empty(), findings })
}
