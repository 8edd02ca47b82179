//! TOML configuration schema. Unknown keys are rejected everywhere:
//! a typo in a tolerance should fail loudly, not run a different experiment.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::battery::{symmetric_eta, BatterySpec, TimeGrid};
use crate::bnb::BnbSettings;
use crate::dispatch::{DispatchProblem, EtaPolicy, DEFAULT_REGULARIZATION_EPS};
use crate::qp::SolverSettings;

use super::scenario::{generate_reference, ReferenceKind, Scenario};
use super::HarnessError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub grid: GridConfig,
    #[serde(rename = "battery")]
    pub batteries: Vec<BatteryConfig>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub dispatch: DispatchConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bnb: BnbConfig,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub steps: usize,
    pub dt_hours: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub p_max_kw: f64,
    pub e_max_kwh: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub e0_kwh: f64,
    /// Net efficiency for the upper envelope; defaults to the symmetric
    /// choice per battery.
    #[serde(default)]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `sinusoid`, `random_walk`, `step`, or `file`.
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub amplitude_kw: f64,
    /// Reference file for `kind = "file"`, one value per line.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchConfig {
    pub regularization_eps: f64,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig { regularization_eps: DEFAULT_REGULARIZATION_EPS }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub alpha: f64,
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverConfig {
            eps_abs: s.eps_abs,
            eps_rel: s.eps_rel,
            max_iter: s.max_iter,
            rho: s.rho,
            alpha: s.alpha,
            polish: s.polish,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnbConfig {
    pub node_limit: usize,
    pub gap_tol: f64,
}

impl Default for BnbConfig {
    fn default() -> Self {
        let s = BnbSettings::default();
        BnbConfig { node_limit: s.node_limit, gap_tol: s.gap_tol }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Fleet sizes to run; the first configured battery is the template.
    pub fleet_sizes: Vec<usize>,
    /// Any of `rbd`, `mip_bnb`, `oracle`.
    pub methods: Vec<String>,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: HarnessConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.batteries.is_empty() {
            return Err(HarnessError::Config("at least one [[battery]] required".into()));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, HarnessError> {
        Ok(TimeGrid::new(self.grid.steps, self.grid.dt_hours)?)
    }

    pub fn battery_specs(&self) -> Result<Vec<BatterySpec>, HarnessError> {
        self.batteries
            .iter()
            .map(|b| {
                BatterySpec::new(b.p_max_kw, b.e_max_kwh, b.eta_c, b.eta_d, b.e0_kwh)
                    .map_err(HarnessError::from)
            })
            .collect()
    }

    pub fn reference_kind(&self) -> Result<ReferenceKind, HarnessError> {
        if self.scenario.kind == "file" {
            let path = self.scenario.file.clone().ok_or_else(|| {
                HarnessError::Config("scenario.kind = \"file\" requires scenario.file".into())
            })?;
            Ok(ReferenceKind::File(path))
        } else {
            self.scenario.kind.parse()
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            eps_abs: self.solver.eps_abs,
            eps_rel: self.solver.eps_rel,
            max_iter: self.solver.max_iter,
            rho: self.solver.rho,
            alpha: self.solver.alpha,
            polish: self.solver.polish,
        }
    }

    pub fn bnb_settings(&self) -> BnbSettings {
        BnbSettings {
            node_limit: self.bnb.node_limit,
            gap_tol: self.bnb.gap_tol,
            ..BnbSettings::default()
        }
    }

    fn eta_policy(&self, specs: &[BatterySpec]) -> EtaPolicy {
        if self.batteries.iter().any(|b| b.eta.is_some()) {
            let etas = self
                .batteries
                .iter()
                .zip(specs)
                .map(|(b, spec)| b.eta.unwrap_or_else(|| symmetric_eta(spec).0))
                .collect();
            EtaPolicy::Explicit(etas)
        } else {
            EtaPolicy::Symmetric
        }
    }

    /// Build the scenario described by this config. `seed_override`
    /// substitutes the scenario seed (the CLI's `--seed`).
    pub fn scenario(&self, seed_override: Option<u64>) -> Result<Scenario, HarnessError> {
        let grid = self.time_grid()?;
        let specs = self.battery_specs()?;
        let kind = self.reference_kind()?;
        let seed = seed_override.unwrap_or(self.scenario.seed);
        let reference = generate_reference(&kind, &grid, seed, self.scenario.amplitude_kw)?;
        let eta_policy = self.eta_policy(&specs);
        let problem = DispatchProblem::with_options(
            specs,
            grid,
            reference,
            eta_policy,
            self.dispatch.regularization_eps,
        )?;
        Ok(Scenario { problem, kind, seed, amplitude: self.scenario.amplitude_kw })
    }
}

/// The experiment defaults: one 15 kW / 60 kWh battery at 95% one-way
/// efficiencies, 24 one-hour steps, starting half full (the source setup
/// leaves the initial SoC unstated; 50% is the harness choice).
pub const DEFAULT_CONFIG_TOML: &str = r#"[grid]
steps = 24
dt_hours = 1.0

[[battery]]
p_max_kw = 15.0
e_max_kwh = 60.0
eta_c = 0.95
eta_d = 0.95
e0_kwh = 30.0

[scenario]
kind = "sinusoid"
seed = 42
amplitude_kw = 15.0

[benchmark]
fleet_sizes = [1, 4, 8, 16]
methods = ["rbd", "mip_bnb"]
"#;
