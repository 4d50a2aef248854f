//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! otsu_bins = 256
//!
//! [robot]
//! mass_kg = 250.0
//! width_m = 0.4
//! height_m = 1.0
//!
//! [grid]
//! cell_size_m = 0.5
//! voxel_size_m = 0.2
//!
//! [ransac]
//! threshold_m = 0.05
//! iterations = 200
//! seed = 0
//!
//! [bands]
//! red_nm = 650.0
//! nir_nm = 810.0
//!
//! [[densities]]
//! class = "plants"
//! density_kg_m2 = 20.0
//! likelihood = "plants"
//!
//! [[densities]]
//! class = "not_plants"
//! density_kg_m2 = 2400.0
//! likelihood = "not_plants"
//! ```
//!
//! Every section and field is optional; missing ones take the values above.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{
    FlattenParams, DEFAULT_CELL_SIZE, DEFAULT_RANSAC_ITERATIONS, DEFAULT_RANSAC_THRESHOLD,
    DEFAULT_VOXEL_SIZE,
};
use crate::semantics::{ClassDensityTable, SemanticModel};
use crate::spectral::otsu::DEFAULT_BINS;
use crate::spectral::BandSelection;
use crate::traversal::RobotSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cell_size_m: f64,
    pub voxel_size_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_size_m: DEFAULT_CELL_SIZE,
            voxel_size_m: DEFAULT_VOXEL_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub threshold_m: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold_m: DEFAULT_RANSAC_THRESHOLD,
            iterations: DEFAULT_RANSAC_ITERATIONS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub robot: RobotSpec,
    pub grid: GridConfig,
    pub densities: ClassDensityTable,
    pub ransac: RansacConfig,
    pub otsu_bins: usize,
    pub bands: BandSelection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            robot: RobotSpec::default(),
            grid: GridConfig::default(),
            densities: ClassDensityTable::default(),
            ransac: RansacConfig::default(),
            otsu_bins: DEFAULT_BINS,
            bands: BandSelection::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        positive("grid.cell_size_m", self.grid.cell_size_m)?;
        positive("grid.voxel_size_m", self.grid.voxel_size_m)?;
        positive("ransac.threshold_m", self.ransac.threshold_m)?;
        if self.ransac.iterations == 0 {
            return Err(Error::invalid("ransac.iterations", "must be at least 1"));
        }
        if self.otsu_bins < 2 {
            return Err(Error::invalid("otsu_bins", "must be at least 2"));
        }
        positive("bands.red_nm", self.bands.red_nm)?;
        positive("bands.nir_nm", self.bands.nir_nm)?;
        positive("bands.green_nm", self.bands.green_nm)?;
        if let Some(b) = self.bands.blue_nm {
            positive("bands.blue_nm", b)?;
        }
        if !(self.bands.tolerance_nm >= 0.0) {
            return Err(Error::invalid("bands.tolerance_nm", "must be non-negative"));
        }
        Ok(())
    }

    pub fn semantic_model(&self) -> SemanticModel {
        SemanticModel {
            bands: self.bands.clone(),
            table: self.densities.clone(),
        }
    }

    /// Flattening uses the robot height as the collision band and the robot
    /// mass as the density of occupied voxels without a density estimate.
    pub fn flatten_params(&self) -> FlattenParams {
        FlattenParams {
            ugv_height: self.robot.height_m,
            robot_mass: self.robot.mass_kg,
            cell_size: self.grid.cell_size_m,
        }
    }
}
