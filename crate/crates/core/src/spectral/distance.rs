//! Distances between a measured spectrum and a class reference profile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ReferenceProfile, ReflectanceSpectrum};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceKind {
    #[serde(rename = "ed")]
    Euclidean,
    #[serde(rename = "bc")]
    BrayCurtis,
    #[serde(rename = "sa")]
    SpectralAngle,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [
        DistanceKind::SpectralAngle,
        DistanceKind::BrayCurtis,
        DistanceKind::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "ed",
            DistanceKind::BrayCurtis => "bc",
            DistanceKind::SpectralAngle => "sa",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ed" | "euclidean" => Ok(DistanceKind::Euclidean),
            "bc" | "bray_curtis" | "bray-curtis" => Ok(DistanceKind::BrayCurtis),
            "sa" | "spectral_angle" | "spectral-angle" => Ok(DistanceKind::SpectralAngle),
            other => Err(Error::invalid(
                "distance",
                format!("unknown spectral distance `{other}`"),
            )),
        }
    }
}

/// Distance between two equally long band vectors.
///
/// Bray-Curtis of two all-zero vectors is 0.
pub fn distance_values(kind: DistanceKind, x: &[f64], reference: &[f64]) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(Error::GridMismatch);
    }
    let d = match kind {
        DistanceKind::Euclidean => x
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        DistanceKind::BrayCurtis => {
            let (num, den) = x.iter().zip(reference).fold((0.0, 0.0), |(n, d), (a, b)| {
                (n + (a - b).abs(), d + (a + b))
            });
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        }
        DistanceKind::SpectralAngle => {
            let (dot, nx, nr) = x
                .iter()
                .zip(reference)
                .fold((0.0, 0.0, 0.0), |(d, nx, nr), (a, b)| {
                    (d + a * b, nx + a * a, nr + b * b)
                });
            if nx == 0.0 || nr == 0.0 {
                return Err(Error::ZeroNorm);
            }
            (dot / (nx.sqrt() * nr.sqrt())).clamp(-1.0, 1.0).acos()
        }
    };
    Ok(d)
}

/// Distance of `x` from a reference profile on the same band grid.
pub fn spectral_distance(
    kind: DistanceKind,
    x: &ReflectanceSpectrum,
    reference: &ReferenceProfile,
) -> Result<f64> {
    if x.grid() != reference.spectrum.grid() {
        return Err(Error::GridMismatch);
    }
    distance_values(kind, x.values(), reference.spectrum.values())
}
