//! Mass-density traversability from multispectral and LiDAR data.
//!
//! Reflectance spectra are attached to LiDAR points, turned into plants
//! probabilities and expected areal mass densities, accumulated in a voxel
//! map, flattened into a 2D grid, and finally used to score candidate paths
//! by the velocity a robot retains after inelastic collisions with the
//! matter it crosses.

pub mod config;
pub mod error;
pub mod fusion;
pub mod io;
pub mod mapping;
pub mod pipeline;
pub mod scenario;
pub mod semantics;
pub mod spectral;
pub mod traversal;

pub use error::{Error, Result};
