//! Reference-signal generators. The experiment setup leaves the tracking
//! reference unspecified, so the harness provides its own seeded families.

use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::battery::TimeGrid;
use crate::dispatch::DispatchProblem;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReferenceKind {
    /// `amplitude * sin(2*pi*k/T)`
    Sinusoid,
    /// Seeded random walk with uniform increments in `[-a/4, a/4]`,
    /// clipped to `[-amplitude, amplitude]`.
    RandomWalk,
    /// Alternating `+amplitude` / `-amplitude` blocks of length `T/4`
    /// (at least one step each).
    Step,
    /// One value per line, read from a file.
    File(PathBuf),
}

impl FromStr for ReferenceKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sinusoid" => Ok(ReferenceKind::Sinusoid),
            "random_walk" => Ok(ReferenceKind::RandomWalk),
            "step" => Ok(ReferenceKind::Step),
            other => Err(HarnessError::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceKind::Sinusoid => f.write_str("sinusoid"),
            ReferenceKind::RandomWalk => f.write_str("random_walk"),
            ReferenceKind::Step => f.write_str("step"),
            ReferenceKind::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// A dispatch problem together with the generator metadata that produced
/// its reference, so runs can be reproduced from the config alone.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: DispatchProblem,
    pub kind: ReferenceKind,
    pub seed: u64,
    pub amplitude: f64,
}

/// Deterministic reference sequence for a kind/seed/amplitude triple.
pub fn generate_reference(
    kind: &ReferenceKind,
    grid: &TimeGrid,
    seed: u64,
    amplitude: f64,
) -> Result<Vec<f64>, HarnessError> {
    if !(amplitude > 0.0) {
        return Err(HarnessError::Config(format!(
            "scenario amplitude must be positive, got {amplitude}"
        )));
    }
    let t = grid.steps;
    match kind {
        ReferenceKind::Sinusoid => Ok((0..t)
            .map(|k| amplitude * (2.0 * std::f64::consts::PI * k as f64 / t as f64).sin())
            .collect()),
        ReferenceKind::RandomWalk => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut value = 0.0f64;
            Ok((0..t)
                .map(|_| {
                    value += rng.random_range(-amplitude / 4.0..amplitude / 4.0);
                    value = value.clamp(-amplitude, amplitude);
                    value
                })
                .collect())
        }
        ReferenceKind::Step => {
            let block = (t / 4).max(1);
            Ok((0..t)
                .map(|k| if (k / block) % 2 == 0 { amplitude } else { -amplitude })
                .collect())
        }
        ReferenceKind::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut values = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let v: f64 = trimmed.parse().map_err(|e| HarnessError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("{e}"),
                })?;
                values.push(v);
            }
            if values.len() < t {
                return Err(HarnessError::LengthMismatch { expected: t, got: values.len() });
            }
            values.truncate(t);
            Ok(values)
        }
    }
}
