//! Experiment configuration: one JSON document per run.

use std::path::Path;

use multispin::ground_state::GroundStateSettings;
use multispin::tap::{DEFAULT_BIAS_ALLOWANCE, DEFAULT_SE_MULTIPLIER, MIN_SEEDS};
use multispin::thermo::EstimatorSettings;
use multispin::{Mixture, OverlapVector, SpeciesLayout};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA: &str = "multispin.config.v1";

/// Shell overlap used by the ground-state command when none is given.
pub const DEFAULT_SHELL: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layout: SpeciesLayout,
    pub mixture: Mixture,
}

impl Default for ModelConfig {
    /// Sixteen spins of a single species with `xi(x) = x^2`.
    fn default() -> Self {
        let layout = SpeciesLayout::single(16).expect("valid layout");
        let mixture = Mixture::from_terms(layout.labels().to_vec(), [(vec![2], 1.0)]).expect("valid mixture");
        Self { layout, mixture }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeEnergyCommand {
    pub estimator: String,
    /// Second estimator run on the same instances, reported side by side.
    pub compare: Option<String>,
    pub settings: EstimatorSettings,
    pub instances: usize,
}

impl Default for FreeEnergyCommand {
    fn default() -> Self {
        Self { estimator: "thermo-integration".into(), compare: None, settings: EstimatorSettings::default(), instances: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateCommand {
    pub solver: String,
    pub settings: GroundStateSettings,
    /// Shell overlap; `DEFAULT_SHELL` in every species when absent.
    pub q: Option<OverlapVector>,
    pub instances: usize,
    /// Adds the eigen-oracle column (pure two-spin single-species models).
    pub oracle: bool,
}

impl Default for GroundStateCommand {
    fn default() -> Self {
        Self { solver: "ascent".into(), settings: GroundStateSettings::default(), q: None, instances: MIN_SEEDS, oracle: false }
    }
}

/// Overlap grid of a scan: an explicit list or a product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QGrid {
    List(Vec<OverlapVector>),
    Product { lo: f64, hi: f64, points: usize },
}

impl Default for QGrid {
    fn default() -> Self {
        QGrid::Product { lo: 0.0, hi: 0.8, points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapScanCommand {
    pub grid: QGrid,
    pub estimator: String,
    pub solver: String,
    pub estimator_settings: EstimatorSettings,
    pub ground_state: GroundStateSettings,
    pub instances: usize,
    pub bias_allowance: f64,
    pub se_multiplier: f64,
}

impl Default for TapScanCommand {
    fn default() -> Self {
        Self {
            grid: QGrid::default(),
            estimator: "thermo-integration".into(),
            solver: "ascent".into(),
            estimator_settings: EstimatorSettings::default(),
            ground_state: GroundStateSettings::default(),
            instances: MIN_SEEDS,
            bias_allowance: DEFAULT_BIAS_ALLOWANCE,
            se_multiplier: DEFAULT_SE_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultisampCommand {
    /// Target overlap; zero when absent.
    pub q: Option<OverlapVector>,
    pub replicas: usize,
    pub eps: Vec<f64>,
    pub settings: EstimatorSettings,
    pub instances: usize,
}

impl Default for MultisampCommand {
    fn default() -> Self {
        Self { q: None, replicas: 2, eps: vec![0.1, 0.2, 0.4], settings: EstimatorSettings::default(), instances: MIN_SEEDS }
    }
}

/// Deliberate faults used to check that the verify suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Drops the `(1 - q)^k` factor from the shifted-mixture coefficients.
    ShiftedCoefficients,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyCommand {
    pub mutation: Option<Mutation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub master_seed: u64,
    pub model: ModelConfig,
    pub free_energy: FreeEnergyCommand,
    pub ground_state: GroundStateCommand,
    pub tap_scan: TapScanCommand,
    pub multisamp: MultisampCommand,
    pub verify: VerifyCommand,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            master_seed: 0,
            model: ModelConfig::default(),
            free_energy: FreeEnergyCommand::default(),
            ground_state: GroundStateCommand::default(),
            tap_scan: TapScanCommand::default(),
            multisamp: MultisampCommand::default(),
            verify: VerifyCommand::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config, reporting the failing field path with line and column.
    pub fn from_json_str(text: &str, origin: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config {
                origin: origin.to_string(),
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        config.validate(origin)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self, origin: &str) -> CliResult<()> {
        let invalid = |path: &str, message: String| CliError::Config {
            origin: origin.to_string(),
            path: path.to_string(),
            line: 0,
            column: 0,
            message,
        };
        if self.schema != CONFIG_SCHEMA {
            return Err(invalid("schema", format!("expected \"{CONFIG_SCHEMA}\", found \"{}\"", self.schema)));
        }
        self.model.mixture.check_layout(&self.model.layout).map_err(|e| invalid("model.mixture.species", e.to_string()))?;
        let n_species = self.model.layout.n_species();
        let overlaps = [
            ("ground_state.q", self.ground_state.q.as_ref()),
            ("multisamp.q", self.multisamp.q.as_ref()),
        ];
        for (path, q) in overlaps {
            if let Some(q) = q {
                if q.len() != n_species {
                    return Err(invalid(path, format!("expected {n_species} components, found {}", q.len())));
                }
            }
        }
        if let QGrid::List(list) = &self.tap_scan.grid {
            if let Some(i) = list.iter().position(|q| q.len() != n_species) {
                return Err(invalid(&format!("tap_scan.grid.list[{i}]"), format!("expected {n_species} components")));
            }
        }
        Ok(())
    }
}
