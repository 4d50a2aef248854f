//! Spectral reflectance math.
//!
//! Raw sensor intensities become reflectance through a linear calibration
//! matrix. Reflectance spectra then feed the model-based vegetation indices
//! ([`index`]), the reference-profile distances ([`distance`]) and the
//! histogram binarization used to turn either into a vegetation mask
//! ([`otsu`]).

pub mod distance;
pub mod index;
pub mod otsu;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{distance_values, spectral_distance, DistanceKind};
pub use index::{vegetation_index, BandSelection, IndexEvaluator, IndexKind, IndexValue};
pub use otsu::{otsu_threshold, Histogram, OtsuThreshold};

/// Reflectance ceiling. Linear calibration can overshoot physical reflectance,
/// so values are clamped here instead of rejected.
pub const REFLECTANCE_CEILING: f64 = 1.5;

/// First band of the VNIR camera grid (nm).
pub const VNIR_FIRST_NM: f64 = 550.0;
/// Last band of the VNIR camera grid (nm).
pub const VNIR_LAST_NM: f64 = 830.0;
/// Number of bands of the reference-profile grid.
pub const VNIR_BAND_COUNT: usize = 29;

/// Ordered, strictly increasing list of band centre wavelengths (nm).
///
/// Cheap to clone; spectra on the same grid share one allocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BandGrid(Arc<[f64]>);

impl BandGrid {
    pub fn new(wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.is_empty() {
            return Err(Error::invalid("wavelengths", "band grid is empty"));
        }
        if wavelengths_nm.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("wavelengths", "non-finite wavelength"));
        }
        if wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("wavelengths", "not strictly increasing"));
        }
        Ok(BandGrid(wavelengths_nm.into()))
    }

    /// 29 bands, 550–830 nm in 10 nm steps.
    pub fn vnir() -> Self {
        let bands = (0..VNIR_BAND_COUNT)
            .map(|i| VNIR_FIRST_NM + 10.0 * i as f64)
            .collect::<Vec<_>>();
        BandGrid(bands.into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the band within `tolerance_nm` of `wavelength_nm` (closest wins).
    pub fn find(&self, wavelength_nm: f64, tolerance_nm: f64) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (w - wavelength_nm).abs()))
            .filter(|(_, d)| *d <= tolerance_nm)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

impl PartialEq for BandGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl TryFrom<Vec<f64>> for BandGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        BandGrid::new(v)
    }
}

impl From<BandGrid> for Vec<f64> {
    fn from(g: BandGrid) -> Self {
        g.0.to_vec()
    }
}

/// Raw per-pixel intensities over a band grid (sensor counts or reflectance).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSample {
    grid: BandGrid,
    intensities: Vec<f64>,
}

impl SpectrumSample {
    pub fn new(grid: BandGrid, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "spectrum sample",
                expected: grid.len(),
                actual: intensities.len(),
            });
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "intensities",
                "values must be finite and non-negative",
            ));
        }
        Ok(SpectrumSample { grid, intensities })
    }

    pub fn grid(&self) -> &BandGrid {
        &self.grid
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }
}

/// Reflectance spectrum with values in `[0, REFLECTANCE_CEILING]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectanceSpectrum {
    grid: BandGrid,
    values: Vec<f64>,
}

impl ReflectanceSpectrum {
    pub fn new(grid: BandGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "reflectance spectrum",
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > REFLECTANCE_CEILING)
        {
            return Err(Error::invalid(
                "reflectance",
                format!("values must be finite and within [0, {REFLECTANCE_CEILING}]"),
            ));
        }
        Ok(ReflectanceSpectrum { grid, values })
    }

    /// Clamps every value into range; returns the spectrum and how many
    /// values had to be clamped. Non-finite values count as clamped to 0.
    pub fn clamped(grid: BandGrid, mut values: Vec<f64>) -> Result<(Self, usize)> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "reflectance spectrum",
                expected: grid.len(),
                actual: values.len(),
            });
        }
        let mut clamped = 0;
        for v in values.iter_mut() {
            let c = if v.is_finite() {
                v.clamp(0.0, REFLECTANCE_CEILING)
            } else {
                0.0
            };
            if c != *v {
                clamped += 1;
                *v = c;
            }
        }
        Ok((ReflectanceSpectrum { grid, values }, clamped))
    }

    pub fn grid(&self) -> &BandGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Class reference reflectance used by the spectral distances.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceProfile {
    pub class_name: String,
    pub spectrum: ReflectanceSpectrum,
}

/// Linear map from `n` intensity channels to `m` reflectance bands.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCalibration {
    matrix: DMatrix<f64>,
    output_grid: BandGrid,
}

/// Result of [`apply_calibration`].
#[derive(Clone, Debug, PartialEq)]
pub struct Calibrated {
    pub spectrum: ReflectanceSpectrum,
    /// Number of bands clamped into `[0, REFLECTANCE_CEILING]`.
    pub clamped: usize,
}

impl SpectralCalibration {
    pub fn new(matrix: DMatrix<f64>, output_grid: BandGrid) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("calibration", "matrix must be at least 1x1"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("calibration", "non-finite matrix entry"));
        }
        if matrix.nrows() != output_grid.len() {
            return Err(Error::DimensionMismatch {
                what: "calibration output bands",
                expected: matrix.nrows(),
                actual: output_grid.len(),
            });
        }
        Ok(SpectralCalibration {
            matrix,
            output_grid,
        })
    }

    pub fn identity(grid: BandGrid) -> Self {
        let n = grid.len();
        SpectralCalibration {
            matrix: DMatrix::identity(n, n),
            output_grid: grid,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn output_grid(&self) -> &BandGrid {
        &self.output_grid
    }

    pub fn input_channels(&self) -> usize {
        self.matrix.ncols()
    }

    /// `M·i` without clamping.
    pub fn linear_map(&self, intensities: &[f64]) -> Result<Vec<f64>> {
        if intensities.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                what: "calibration input channels",
                expected: self.matrix.ncols(),
                actual: intensities.len(),
            });
        }
        let i = DVector::from_column_slice(intensities);
        Ok((&self.matrix * i).iter().copied().collect())
    }
}

/// Converts a raw intensity sample to reflectance: `r = M·i`, clamped.
pub fn apply_calibration(cal: &SpectralCalibration, sample: &SpectrumSample) -> Result<Calibrated> {
    let raw = cal.linear_map(sample.intensities())?;
    let (spectrum, clamped) = ReflectanceSpectrum::clamped(cal.output_grid.clone(), raw)?;
    Ok(Calibrated { spectrum, clamped })
}
