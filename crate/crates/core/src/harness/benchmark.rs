//! Benchmark orchestration: fleets of identical batteries tracking a scaled
//! reference, solved by each requested method and certified before a row is
//! recorded.

use std::str::FromStr;

use crate::bnb::{enumerate_exact_small, solve_exact_bnb, BnbStatus};
use crate::dispatch::{solve_rbd, verify_realizability, DispatchProblem, DispatchResult};

use super::config::HarnessConfig;
use super::metrics::rmse;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Rbd,
    MipBnb,
    Oracle,
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rbd" => Ok(Method::Rbd),
            "mip_bnb" | "mip" => Ok(Method::MipBnb),
            "oracle" => Ok(Method::Oracle),
            other => Err(HarnessError::Config(format!("unknown method: {other}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Rbd => f.write_str("rbd"),
            Method::MipBnb => f.write_str("mip_bnb"),
            Method::Oracle => f.write_str("oracle"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub method: Method,
    pub n_batteries: usize,
    /// Wall time of the solve call only, excluding problem assembly.
    pub solve_time_s: f64,
    pub rmse_kw: f64,
    pub objective: f64,
    pub status: String,
    /// Realizability verdict for methods that produce a dispatch
    /// (always true for recorded rbd/mip rows unless something is wrong).
    pub realizable: bool,
}

/// Run every `(fleet size, method)` pair from the config's `[benchmark]`
/// section: `N` copies of the first configured battery track `N` times the
/// base reference. Rows come back sorted by fleet size, then method.
pub fn run_benchmark(
    config: &HarnessConfig,
    seed_override: Option<u64>,
) -> Result<Vec<BenchmarkRow>, HarnessError> {
    let bench = config
        .benchmark
        .as_ref()
        .ok_or_else(|| HarnessError::Config("config has no [benchmark] section".into()))?;
    let methods: Vec<Method> =
        bench.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    if methods.is_empty() || bench.fleet_sizes.is_empty() {
        return Err(HarnessError::Config("benchmark needs fleet_sizes and methods".into()));
    }

    let base = config.scenario(seed_override)?;
    let template = base.problem.batteries()[0].clone();
    let base_reference = base.problem.reference().to_vec();

    let mut rows = Vec::new();
    for &n in &bench.fleet_sizes {
        if n == 0 {
            return Err(HarnessError::Config("fleet size 0 is not meaningful".into()));
        }
        let fleet = vec![template.clone(); n];
        let reference: Vec<f64> = base_reference.iter().map(|r| n as f64 * r).collect();
        let problem = DispatchProblem::with_options(
            fleet,
            *base.problem.grid(),
            reference.clone(),
            base.problem.eta_policy().clone(),
            base.problem.regularization_eps(),
        )?;
        for &method in &methods {
            rows.push(run_row(config, &problem, method, n, &reference));
        }
    }
    rows.sort_by(|a, b| (a.n_batteries, a.method).cmp(&(b.n_batteries, b.method)));
    Ok(rows)
}

fn run_row(
    config: &HarnessConfig,
    problem: &DispatchProblem,
    method: Method,
    n: usize,
    reference: &[f64],
) -> BenchmarkRow {
    let outcome: Result<(DispatchResult, String), String> = match method {
        Method::Rbd => solve_rbd(problem, &config.solver_settings())
            .map(|r| (r, "optimal".to_string()))
            .map_err(|e| e.to_string()),
        Method::MipBnb => solve_exact_bnb(problem, &config.bnb_settings())
            .map(|r| {
                let status = match r.status {
                    BnbStatus::Optimal => format!("optimal gap={:.1e}", r.gap),
                    BnbStatus::NodeLimit => format!("node_limit gap={:.1e}", r.gap),
                };
                (r.dispatch, status)
            })
            .map_err(|e| e.to_string()),
        Method::Oracle => enumerate_exact_small(problem)
            .map(|r| (r.dispatch, "optimal".to_string()))
            .map_err(|e| e.to_string()),
    };

    match outcome {
        Ok((result, status)) => {
            let e_max_min = problem
                .batteries()
                .iter()
                .map(|b| b.e_max)
                .fold(f64::INFINITY, f64::min);
            let realizable = verify_realizability(&result, problem, 1e-6 * e_max_min)
                .map(|r| r.passed)
                .unwrap_or(false);
            let status =
                if realizable { status } else { format!("{status} REALIZABILITY-FAILED") };
            let rmse_kw = rmse(reference, &result.fleet_net()).unwrap_or(f64::NAN);
            BenchmarkRow {
                method,
                n_batteries: n,
                solve_time_s: result.stats().solve_time.as_secs_f64(),
                rmse_kw,
                objective: result.objective(),
                status,
                realizable,
            }
        }
        Err(msg) => BenchmarkRow {
            method,
            n_batteries: n,
            solve_time_s: f64::NAN,
            rmse_kw: f64::NAN,
            objective: f64::NAN,
            status: format!("error: {msg}"),
            realizable: false,
        },
    }
}

/// Aligned text table of benchmark rows.
pub fn render_table(rows: &[BenchmarkRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>4} {:>10} {:>12} {:>14}  {}\n",
        "method", "N", "time_s", "rmse_kw", "objective", "status"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<8} {:>4} {:>10.3} {:>12.3} {:>14.3}  {}\n",
            row.method.to_string(),
            row.n_batteries,
            row.solve_time_s,
            row.rmse_kw,
            row.objective,
            row.status
        ));
    }
    out
}

/// CSV form of benchmark rows.
pub fn write_benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("method,n_batteries,solve_time_s,rmse_kw,objective,status\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{:.3},{:.9},{:.9},{}\n",
            row.method, row.n_batteries, row.solve_time_s, row.rmse_kw, row.objective, row.status
        ));
    }
    out
}
