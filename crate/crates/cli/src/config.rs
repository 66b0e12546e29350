//! TOML run configuration. Every section is optional; flags override file values.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub const SEED_ENV: &str = "RESID_RL_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub env: EnvSection,
    pub data: DataSection,
    pub regression: Option<toml::Table>,
    pub dqn: Option<toml::Table>,
    pub solver: SolverSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
    pub theory: Option<toml::Table>,
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub name: Option<String>,
    pub noise_std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Input dataset for fit-model, solve, train.
    pub path: Option<PathBuf>,
    pub trajectories: Option<usize>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub operator: Option<String>,
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub quadrature_nodes: Option<usize>,
    /// Pre-fitted regression model for the residual operator.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub model: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub horizon_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_trajectories: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub data_horizon: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Flag, then file, then `RESID_RL_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not a u64"))),
            Err(_) => Ok(0),
        }
    }
}

/// Deserializes a typed section, filling unspecified fields from the type's default.
/// Sections carrying their own `seed` key are rejected in favour of the top-level seed.
pub fn section<T: DeserializeOwned + Default>(table: &Option<toml::Table>, name: &str) -> Result<T, CliError> {
    let Some(t) = table else {
        return Ok(T::default());
    };
    if t.contains_key("seed") {
        return Err(CliError::Usage(format!(
            "[{name}].seed is not accepted; set the top-level `seed` instead"
        )));
    }
    toml::Value::Table(t.clone())
        .try_into()
        .map_err(|e| CliError::Usage(format!("[{name}]: {e}")))
}
