use std::fs;
use std::path::{Path, PathBuf};

use pnorm_erm::constants::ConstantOptions;
use pnorm_erm::experiments::{ConstantsSource, ExperimentConfig, ExperimentKind};
use pnorm_erm::{DistributionSpec, McOptions, SolverOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    GenData,
    Fit,
    Constants,
    Bounds,
    Experiment,
    Selftest,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GenData => "gen-data",
            Self::Fit => "fit",
            Self::Constants => "constants",
            Self::Bounds => "bounds",
            Self::Experiment => "experiment",
            Self::Selftest => "selftest",
        }
    }
}

fn default_probes() -> usize {
    16
}

fn default_trials() -> usize {
    100
}

fn default_delta() -> f64 {
    0.1
}

/// Campaign settings; the spec, solver and seed come from the enclosing
/// [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default)]
    pub kind: ExperimentKind,
    pub p: Option<f64>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub constants: ConstantsSource,
    #[serde(default)]
    pub mc: McOptions,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

/// A replayable run: every flag has a field here, and flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandName>,
    pub spec: Option<DistributionSpec>,
    pub solver: Option<SolverOptions>,
    pub experiment: Option<ExperimentBlock>,
    pub constants: Option<ConstantOptions>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub n: Option<usize>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn check_command(&self, invoked: CommandName) -> Result<(), ConfigError> {
        match self.command {
            Some(c) if c != invoked => Err(ConfigError(format!(
                "config is for `{}` but `{}` was invoked",
                c.as_str(),
                invoked.as_str()
            ))),
            _ => Ok(()),
        }
    }

    /// Assemble a campaign from the experiment block and the shared fields.
    pub fn experiment_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let block = self
            .experiment
            .clone()
            .ok_or_else(|| ConfigError("config has no `experiment` block".into()))?;
        let spec = self
            .spec
            .clone()
            .ok_or_else(|| ConfigError("config has no `spec` block".into()))?;
        let p = self
            .p
            .or(block.p)
            .ok_or_else(|| ConfigError("no exponent: set `p` or `experiment.p`".into()))?;
        let mut n_grid = block.n_grid;
        if let Some(n) = self.n {
            n_grid = vec![n];
        }
        Ok(ExperimentConfig {
            kind: block.kind,
            spec,
            p,
            n_grid,
            trials: block.trials,
            delta: block.delta,
            seed: self.seed.unwrap_or(0),
            constants: block.constants,
            mc: block.mc,
            solver: self.solver.unwrap_or_default(),
            probes: block.probes,
        })
    }
}
