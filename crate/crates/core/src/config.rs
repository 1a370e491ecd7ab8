//! Experiment configuration files and the ten bundled grid presets.
//!
//! A config is one TOML document. Every physical and learning constant is
//! spelled out in it; nothing falls back to a built-in default except the
//! optional `[structure]` block and the schedule.

use serde::{Deserialize, Serialize};

use crate::engine::{Mode, RunConfig, ScenarioChange};
use crate::error::{Error, Result};
use crate::learner::{LearningParams, ACTION_COUNT};
use crate::scenario::{random_scenario, GridSpec, PhysicalParams, Scenario, ScenarioTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub uavs: usize,
    pub energy_min: f64,
    pub energy_max: f64,
    pub ec_altitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub runs: usize,
    pub episodes: usize,
    pub steps: usize,
    pub mode: Mode,
    #[serde(default = "infinite")]
    pub dynamicity_threshold: f64,
    #[serde(default)]
    pub lifetime_mode: bool,
}

fn infinite() -> f64 {
    f64::INFINITY
}

/// Grid, region and table sizes a preset declares for itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub grid: [usize; 2],
    pub regions: usize,
    pub region_size: [usize; 2],
    pub states: usize,
    pub qtable_size: usize,
    pub iterations: usize,
    pub episodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridSpec,
    pub physical: PhysicalParams,
    pub fleet: FleetSpec,
    pub learning: LearningParams,
    pub run: RunSpec,
    /// Expected structure, checked when the file is loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<Structure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScenarioChange>,
    /// Fixed world; when absent each seed draws its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating; the verify suite wants to report bad
    /// parameters rather than refuse them.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.template().validate()?;
        self.learning.validate()?;
        self.run_config(0).validate()?;
        if let Some(s) = &self.scenario {
            if s.grid() != &self.grid || s.phys() != &self.physical {
                return Err(Error::Config(
                    "explicit scenario disagrees with the [grid] or [physical] section".into(),
                ));
            }
            if s.uav_count() != self.fleet.uavs {
                return Err(Error::Config(format!(
                    "explicit scenario has {} UAVs, [fleet] says {}",
                    s.uav_count(),
                    self.fleet.uavs
                )));
            }
        }
        if let Some(expected) = self.structure {
            let actual = self.structure();
            if expected != actual {
                return Err(Error::Config(format!(
                    "structure mismatch: file declares {expected:?}, config yields {actual:?}"
                )));
            }
        }
        Ok(())
    }

    /// Structural rows computed from the grid and run sections.
    pub fn structure(&self) -> Structure {
        let states = self.grid.states_per_region();
        Structure {
            grid: [self.grid.length_l1, self.grid.length_l2],
            regions: self.grid.region_count(),
            region_size: [self.grid.region_r1, self.grid.region_r2],
            states,
            qtable_size: states * ACTION_COUNT,
            iterations: self.run.runs,
            episodes: self.run.episodes,
            steps: self.run.steps,
        }
    }

    pub fn template(&self) -> ScenarioTemplate {
        ScenarioTemplate {
            grid: self.grid,
            phys: self.physical,
            uavs: self.fleet.uavs,
            ec_altitude: self.fleet.ec_altitude,
            energy_min: self.fleet.energy_min,
            energy_max: self.fleet.energy_max,
        }
    }

    /// The world for `seed`: the explicit scenario, or a seeded random draw.
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        match &self.scenario {
            Some(s) => Ok(s.clone()),
            None => random_scenario(seed, &self.template()),
        }
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            runs: self.run.runs,
            episodes: self.run.episodes,
            steps: self.run.steps,
            mode: self.run.mode,
            dynamicity_threshold: self.run.dynamicity_threshold,
            lifetime_mode: self.run.lifetime_mode,
            master_seed: seed,
            schedule: self.schedule.clone(),
        }
    }
}

const PRESETS: [(&str, &str); 10] = [
    ("table1-9x9", include_str!("../presets/table1-9x9.toml")),
    ("table1-16x16", include_str!("../presets/table1-16x16.toml")),
    ("table1-27x27", include_str!("../presets/table1-27x27.toml")),
    ("table1-32x32-64regions", include_str!("../presets/table1-32x32-64regions.toml")),
    ("table1-32x32-16regions", include_str!("../presets/table1-32x32-16regions.toml")),
    ("table1-64x64-256regions", include_str!("../presets/table1-64x64-256regions.toml")),
    ("table1-64x64-64regions", include_str!("../presets/table1-64x64-64regions.toml")),
    ("table1-64x64-16regions", include_str!("../presets/table1-64x64-16regions.toml")),
    ("table1-81x81-81regions", include_str!("../presets/table1-81x81-81regions.toml")),
    ("table1-81x81-9regions", include_str!("../presets/table1-81x81-9regions.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Raw TOML text of a bundled preset.
pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(preset_source(name)?)
}
