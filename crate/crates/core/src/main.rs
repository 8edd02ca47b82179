use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rbd::battery::{
    simulate_relaxed, simulate_simplified, simulate_standard, symmetric_eta, NetSchedule,
    Schedule,
};
use rbd::bnb::{enumerate_exact_small, solve_exact_bnb, BnbStatus};
use rbd::dispatch::{solve_rbd, verify_realizability, DispatchResult, RealizabilityReport};
use rbd::harness::{
    emit_plotdata, node_trace_csv, read_plotdata, render_table, run_benchmark, trajectory_csv,
    verify_plotdata, write_benchmark_csv, HarnessConfig, DEFAULT_CONFIG_TOML,
};

/// Battery dispatch toolkit: envelope-certified schedules, an exact
/// branch-and-bound baseline, and benchmark tooling.
#[derive(Parser)]
#[command(name = "rbd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a battery model over a schedule and export the SoC trajectory.
    Simulate(SimulateArgs),
    /// Solve the dispatch problem from a config and certify the result.
    Dispatch(DispatchArgs),
    /// Run the (method, fleet size) benchmark matrix from the config.
    Benchmark(BenchmarkArgs),
    /// Re-verify an exported dispatch CSV against the exact model.
    Verify(VerifyArgs),
    /// Print a ready-to-edit example configuration.
    InitConfig(InitConfigArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file with the battery and grid definitions.
    #[arg(long)]
    config: PathBuf,
    /// Which battery from the config to simulate.
    #[arg(long, default_value_t = 0)]
    battery: usize,
    #[arg(long, value_enum)]
    model: Model,
    /// Schedule CSV with headers: `pc_kw,pd_kw` (two-input models) or
    /// `pb_kw` (simplified); an optional leading `step` column is ignored.
    #[arg(long)]
    schedule: PathBuf,
    /// Net efficiency for the simplified model (default: symmetric choice).
    #[arg(long)]
    eta: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Standard,
    Relaxed,
    Simplified,
}

#[derive(Args)]
struct DispatchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Rbd)]
    method: Method,
    /// Write per-battery result CSVs here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the branch-and-bound node trace here (mip method only).
    #[arg(long)]
    node_trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Rbd,
    Mip,
    Oracle,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write the benchmark rows as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Per-battery result CSV as written by `dispatch --out`.
    #[arg(long)]
    result: PathBuf,
    /// Which battery from the config the file belongs to.
    #[arg(long, default_value_t = 0)]
    battery: usize,
}

#[derive(Args)]
struct InitConfigArgs {
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Dispatch(args) => dispatch(args),
        Command::Benchmark(args) => benchmark(args),
        Command::Verify(args) => verify(args),
        Command::InitConfig(args) => {
            match args.out {
                Some(path) => std::fs::write(path, DEFAULT_CONFIG_TOML)?,
                None => print!("{DEFAULT_CONFIG_TOML}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let config = HarnessConfig::from_path(&args.config)?;
    let grid = config.time_grid()?;
    let specs = config.battery_specs()?;
    let spec = specs
        .get(args.battery)
        .ok_or_else(|| format!("config has {} batteries, asked for {}", specs.len(), args.battery))?;
    let columns = read_schedule_csv(&args.schedule)?;

    let traj = match args.model {
        Model::Standard | Model::Relaxed => {
            let (pc, pd) = match (columns.pc, columns.pd) {
                (Some(pc), Some(pd)) => (pc, pd),
                _ => return Err("standard/relaxed models need pc_kw and pd_kw columns".into()),
            };
            let sched = Schedule::new(pc, pd)?;
            match args.model {
                Model::Standard => simulate_standard(spec, &grid, &sched)?,
                _ => simulate_relaxed(spec, &grid, &sched)?,
            }
        }
        Model::Simplified => {
            let pb = match (columns.pb, columns.pc, columns.pd) {
                (Some(pb), _, _) => pb,
                (None, Some(pc), Some(pd)) => pc.iter().zip(&pd).map(|(c, d)| c - d).collect(),
                _ => return Err("simplified model needs a pb_kw column".into()),
            };
            let eta = args.eta.unwrap_or_else(|| symmetric_eta(spec).0);
            simulate_simplified(spec, &grid, &NetSchedule::new(pb)?, eta)?
        }
    };

    let csv = trajectory_csv(&traj, &grid);
    match args.out {
        Some(path) => {
            std::fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(args: DispatchArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let config = HarnessConfig::from_path(&args.config)?;
    let scenario = config.scenario(args.seed)?;
    let problem = &scenario.problem;
    println!(
        "scenario: {} (seed {}, amplitude {} kW), {} batteries, T={}",
        scenario.kind,
        scenario.seed,
        scenario.amplitude,
        problem.batteries().len(),
        problem.grid().steps
    );

    let result: DispatchResult = match args.method {
        Method::Rbd => {
            let result = solve_rbd(problem, &config.solver_settings())?;
            println!(
                "rbd: {} after {} iterations, {:.3} s",
                result.stats().status,
                result.stats().iterations,
                result.stats().solve_time.as_secs_f64()
            );
            result
        }
        Method::Mip => {
            let mut settings = config.bnb_settings();
            settings.trace = args.node_trace.is_some();
            let result = solve_exact_bnb(problem, &settings)?;
            println!(
                "mip: {} after {} nodes, gap {:.3e}, bound {:.3}, {:.3} s",
                result.status,
                result.nodes_explored,
                result.gap,
                result.best_bound,
                result.dispatch.stats().solve_time.as_secs_f64()
            );
            if result.status == BnbStatus::NodeLimit {
                println!("note: node limit reached; incumbent is reported with its gap");
            }
            if let (Some(path), Some(trace)) = (&args.node_trace, &result.node_trace) {
                std::fs::write(path, node_trace_csv(trace))?;
                println!("wrote {}", path.display());
            }
            result.dispatch
        }
        Method::Oracle => {
            let result = enumerate_exact_small(problem)?;
            println!(
                "oracle: {} mode patterns enumerated, {:.3} s",
                result.nodes_explored,
                result.dispatch.stats().solve_time.as_secs_f64()
            );
            result.dispatch
        }
    };

    println!("objective: {:.6} kW^2", result.objective());
    println!("rmse: {:.6} kW", result.rmse());

    let e_max_min = problem.batteries().iter().map(|b| b.e_max).fold(f64::INFINITY, f64::min);
    let report = verify_realizability(&result, problem, 1e-6 * e_max_min)?;
    print_realizability(&report);

    if let Some(path) = args.out {
        for written in emit_plotdata(&result, &path)? {
            println!("wrote {}", written.display());
        }
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn print_realizability(report: &RealizabilityReport) {
    println!(
        "realizability: {} (worst below {:.3e} kWh, worst above {:.3e} kWh)",
        if report.passed { "PASS" } else { "FAIL" },
        report.worst_below,
        report.worst_above
    );
    for (i, battery) in report.per_battery.iter().enumerate() {
        if !battery.limits.passed || !battery.sandwich_ok {
            println!(
                "  battery {i}: limits {} (first violation at {:?}), envelope order {}",
                if battery.limits.passed { "ok" } else { "VIOLATED" },
                battery.limits.first_violation,
                if battery.sandwich_ok { "ok" } else { "VIOLATED" }
            );
        }
    }
}

fn benchmark(args: BenchmarkArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let config = HarnessConfig::from_path(&args.config)?;
    let rows = run_benchmark(&config, args.seed)?;
    print!("{}", render_table(&rows));
    if let Some(path) = args.out {
        std::fs::write(&path, write_benchmark_csv(&rows))?;
        eprintln!("wrote {}", path.display());
    }
    let all_ok = rows.iter().all(|r| r.realizable || r.status.starts_with("error:"));
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn verify(args: VerifyArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let config = HarnessConfig::from_path(&args.config)?;
    let grid = config.time_grid()?;
    let specs = config.battery_specs()?;
    let spec = specs
        .get(args.battery)
        .ok_or_else(|| format!("config has {} batteries, asked for {}", specs.len(), args.battery))?;
    let data = read_plotdata(&args.result)?;
    let verdict = verify_plotdata(&data, spec, &grid, 1e-6 * spec.e_max)?;
    if verdict.passed {
        println!("PASS: {} realizable and envelope-consistent", args.result.display());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: {}", args.result.display());
        for finding in &verdict.findings {
            println!("  - {finding}");
        }
        Ok(ExitCode::from(2))
    }
}

struct ScheduleColumns {
    pc: Option<Vec<f64>>,
    pd: Option<Vec<f64>>,
    pb: Option<Vec<f64>>,
}

fn read_schedule_csv(path: &Path) -> Result<ScheduleColumns, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty schedule file")?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    for name in &names {
        if !matches!(*name, "step" | "pc_kw" | "pd_kw" | "pb_kw") {
            return Err(format!("unknown schedule column {name:?}").into());
        }
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                idx + 2,
                names.len(),
                fields.len()
            )
            .into());
        }
        for (col, field) in columns.iter_mut().zip(&fields) {
            col.push(field.trim().parse()?);
        }
    }
    let take = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .map(|i| columns[i].clone())
    };
    Ok(ScheduleColumns { pc: take("pc_kw"), pd: take("pd_kw"), pb: take("pb_kw") })
}
