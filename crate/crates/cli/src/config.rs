//! The TOML run configuration.
//!
//! Every section is optional; missing keys take the defaults shown by
//! `caim --print-config <command>`.

use std::path::Path;

use caim_core::estimator::{IsingConfig, L1Config};
use caim_core::eval::{ExperimentSpec, GridConfig, Method, SceneTemplate};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub methods: Vec<Method>,
    /// AP counts for the `sweep_p.csv` table; omitted means no AP sweep.
    pub sweep_aps: Option<Vec<usize>>,
    pub seed: u64,
}

/// The `(γ, μ)` grid explored by the `sweep` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub mus: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.5, 1.0, 2.0],
            mus: vec![0.0, 1.0, 2.0, 3.0],
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub scene: SceneTemplate,
    pub ising: IsingConfig,
    pub l1: L1Config,
    pub experiment: ExperimentConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        Self {
            grid: spec.grid,
            scene: spec.scene,
            ising: spec.ising,
            l1: spec.l1,
            experiment: ExperimentConfig {
                trials: spec.trials,
                methods: spec.methods,
                sweep_aps: spec.sweep_aps,
                seed: spec.seed,
            },
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        RunConfig::default().experiment
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// A noiseless scene is written as `snr_db = inf` so the output reloads
    /// to the same configuration.
    pub fn to_toml(&self) -> Result<String> {
        let mut cfg = self.clone();
        cfg.scene.snr_db.get_or_insert(f64::INFINITY);
        Ok(toml::to_string_pretty(&cfg)?)
    }

    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            grid: self.grid.clone(),
            scene: self.scene.clone(),
            trials: self.experiment.trials,
            methods: self.experiment.methods.clone(),
            ising: self.ising.clone(),
            l1: self.l1.clone(),
            sweep_aps: self.experiment.sweep_aps.clone(),
            seed: self.experiment.seed,
        }
    }

    /// Checks every section before anything runs.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.spec().validate()?;
        self.scene
            .instantiate(&grid, self.experiment.seed)
            .validate()?;
        if !(self.ising.gamma.is_finite() && self.ising.gamma > 0.0) {
            return Err(CliError::Config(format!(
                "ising.gamma must be positive, got {}",
                self.ising.gamma
            )));
        }
        if !(self.ising.mu.is_finite() && self.ising.mu >= 0.0) {
            return Err(CliError::Config(format!(
                "ising.mu must be non-negative, got {}",
                self.ising.mu
            )));
        }
        if self.sweep.gammas.is_empty() || self.sweep.mus.is_empty() {
            return Err(CliError::Config(
                "sweep.gammas and sweep.mus must not be empty".into(),
            ));
        }
        if self.sweep.trials == 0 {
            return Err(CliError::Config("sweep.trials must be at least 1".into()));
        }
        if let Some(bad) = self
            .sweep
            .gammas
            .iter()
            .chain(&self.sweep.mus)
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(CliError::Config(format!(
                "sweep values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(())
    }
}
