//! Reproducibility surface: scenario generation, metrics, benchmark
//! orchestration, configuration files, and CSV emission.

mod benchmark;
mod config;
mod metrics;
mod plotdata;
mod scenario;

pub use benchmark::{render_table, run_benchmark, write_benchmark_csv, BenchmarkRow, Method};
pub use config::{BatteryConfig, HarnessConfig, ScenarioConfig, DEFAULT_CONFIG_TOML};
pub use metrics::rmse;
pub use plotdata::{
    emit_plotdata, node_trace_csv, read_plotdata, trajectory_csv, verify_plotdata, PlotData,
    PlotVerification,
};
pub use scenario::{generate_reference, ReferenceKind, Scenario};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown reference kind: {0}")]
    UnknownKind(String),
    #[error("length mismatch: {expected} reference entries vs {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Battery(#[from] crate::battery::BatteryError),
    #[error(transparent)]
    Dispatch(#[from] crate::dispatch::DispatchError),
    #[error(transparent)]
    Bnb(#[from] crate::bnb::BnbError),
}
