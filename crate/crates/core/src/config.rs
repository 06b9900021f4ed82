//! TOML run configuration. Every section and key is optional; missing values
//! take their defaults.
//!
//! ```toml
//! seed = 7                 # dataset generation seed
//!
//! [grid]                   # all four keys required when the section is given
//! width_cells = 50
//! height_cells = 50
//! resolution_m = 0.5
//! origin_xy_m = [0.0, 0.0]
//!
//! [world]                  # obstacle density, sizes, rewards
//! [sensor]                 # points_per_cell, noise_sigma_z, pitch_error_deg, ...
//! [demo]                   # gamma, min_dist_m, max_dist_m, max_steps
//! [data]                   # n_samples, samples_per_world, test_fraction
//! [train]                  # architecture, learning_rate, batch_size, n_steps, l1, l2, ...
//! [baseline]               # variance_threshold, vehicle_radius_m, costs
//! [eval]                   # n_samples, collisions_per_sample, seed
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineParams;
use crate::error::Result;
use crate::eval::EvalSettings;
use crate::grid::GridSpec;
use crate::io::read_toml;
use crate::synth::{DatasetConfig, DatasetParams, DemoParams, SensorSettings, WorldParams};
use crate::train::TrainConfig;

/// Default grid: 50 × 50 cells at 0.5 m, i.e. 25 m × 25 m.
pub fn default_grid() -> GridSpec {
    GridSpec {
        width_cells: 50,
        height_cells: 50,
        resolution_m: 0.5,
        origin_xy_m: [0.0, 0.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub grid: GridSpec,
    pub world: WorldParams,
    pub sensor: SensorSettings,
    pub demo: DemoParams,
    pub data: DatasetParams,
    pub train: TrainConfig,
    pub baseline: BaselineParams,
    pub eval: EvalSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: default_grid(),
            world: WorldParams::default(),
            sensor: SensorSettings::default(),
            demo: DemoParams::default(),
            data: DatasetParams::default(),
            train: TrainConfig::default(),
            baseline: BaselineParams::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Config = read_toml(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.world.validate()?;
        self.sensor.rig(&self.grid).validate(&self.grid)?;
        self.train.validate()?;
        self.baseline.validate()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            spec: self.grid,
            world: self.world,
            sensor: self.sensor,
            demo: self.demo,
            data: self.data,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c: Config = toml::from_str("seed = 4\n[train]\nbatch_size = 2\narchitecture = \"ms_fcn\"\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.train.architecture, crate::arch::ArchitectureId::MsFcn);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1\n").is_err());
    }

    #[test]
    fn default_config_round_trips() {
        let text = toml::to_string(&Config::default()).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, Config::default());
    }
}
