//! Model-based vegetation indices.
//!
//! Only ndvi reads true bands (red and NIR). The RGB indices run on band
//! surrogates because the VNIR camera starts at 550 nm: red is the 650 nm
//! band, green the 550 nm band, and blue the closest band under green, or
//! green itself when none exists. All of it is configurable through
//! [`BandSelection`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BandGrid, ReflectanceSpectrum};
use crate::error::{Error, Result};

/// Nominal blue wavelength used to pick the blue surrogate band.
const NOMINAL_BLUE_NM: f64 = 470.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Mgrvi,
    Gli,
    Mpri,
    Rgbvi,
    Exg,
    Exr,
    Exgr,
    Veg,
    Evi,
    Ndvi,
}

impl IndexKind {
    pub const ALL: [IndexKind; 10] = [
        IndexKind::Mgrvi,
        IndexKind::Gli,
        IndexKind::Mpri,
        IndexKind::Rgbvi,
        IndexKind::Exg,
        IndexKind::Exr,
        IndexKind::Exgr,
        IndexKind::Veg,
        IndexKind::Evi,
        IndexKind::Ndvi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Mgrvi => "mgrvi",
            IndexKind::Gli => "gli",
            IndexKind::Mpri => "mpri",
            IndexKind::Rgbvi => "rgbvi",
            IndexKind::Exg => "exg",
            IndexKind::Exr => "exr",
            IndexKind::Exgr => "exgr",
            IndexKind::Veg => "veg",
            IndexKind::Evi => "evi",
            IndexKind::Ndvi => "ndvi",
        }
    }

    /// Channels the index reads.
    pub fn channels(self) -> &'static [Channel] {
        use Channel::*;
        match self {
            IndexKind::Ndvi => &[Red, Nir],
            IndexKind::Evi => &[Red, Blue, Nir],
            IndexKind::Mgrvi | IndexKind::Mpri | IndexKind::Exr => &[Red, Green],
            IndexKind::Gli
            | IndexKind::Rgbvi
            | IndexKind::Exg
            | IndexKind::Exgr
            | IndexKind::Veg => &[Red, Green, Blue],
        }
    }

    /// Whether vegetation sits on the high side of the index.
    ///
    /// Excess red measures soil rather than vegetation, so plants score low.
    pub fn plants_high(self) -> bool {
        !matches!(self, IndexKind::Exr)
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        // the table abbreviates two of the names
        let s = match s.as_str() {
            "mgrv" => "mgrvi",
            "mpr" => "mpri",
            other => other,
        };
        IndexKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("index", format!("unknown vegetation index `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Red,
    Green,
    Blue,
    Nir,
}

/// Which bands stand in for R, G, B and NIR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSelection {
    pub red_nm: f64,
    pub green_nm: f64,
    /// `None` picks the band closest to 470 nm strictly below `green_nm`,
    /// falling back to the green band.
    pub blue_nm: Option<f64>,
    pub nir_nm: f64,
    /// Maximum distance between a requested wavelength and a band centre.
    pub tolerance_nm: f64,
}

impl Default for BandSelection {
    fn default() -> Self {
        BandSelection {
            red_nm: 650.0,
            green_nm: 550.0,
            blue_nm: None,
            nir_nm: 810.0,
            tolerance_nm: 0.5,
        }
    }
}

impl BandSelection {
    fn lookup(&self, grid: &BandGrid, nm: f64) -> Result<usize> {
        grid.find(nm, self.tolerance_nm)
            .ok_or(Error::MissingBand { wavelength_nm: nm })
    }

    /// Resolves `channel` to a band index of `grid`.
    pub fn resolve(&self, grid: &BandGrid, channel: Channel) -> Result<usize> {
        match channel {
            Channel::Red => self.lookup(grid, self.red_nm),
            Channel::Green => self.lookup(grid, self.green_nm),
            Channel::Nir => self.lookup(grid, self.nir_nm),
            Channel::Blue => match self.blue_nm {
                Some(nm) => self.lookup(grid, nm),
                None => {
                    let below = grid
                        .as_slice()
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w < self.green_nm - self.tolerance_nm)
                        .min_by(|a, b| {
                            (a.1 - NOMINAL_BLUE_NM)
                                .abs()
                                .total_cmp(&(b.1 - NOMINAL_BLUE_NM).abs())
                        })
                        .map(|(i, _)| i);
                    match below {
                        Some(i) => Ok(i),
                        None => self.lookup(grid, self.green_nm),
                    }
                }
            },
        }
    }
}

/// An index value; `degenerate` marks a zero denominator (value forced to 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexValue {
    pub value: f64,
    pub degenerate: bool,
}

impl IndexValue {
    fn ok(value: f64) -> Self {
        if value.is_finite() {
            IndexValue {
                value,
                degenerate: false,
            }
        } else {
            IndexValue::degenerate()
        }
    }

    fn degenerate() -> Self {
        IndexValue {
            value: 0.0,
            degenerate: true,
        }
    }
}

fn ratio(num: f64, den: f64) -> IndexValue {
    if den == 0.0 {
        IndexValue::degenerate()
    } else {
        IndexValue::ok(num / den)
    }
}

/// Channel values read from one spectrum. Unused channels may be zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Channels {
    pub red: f64,
    pub green: f64,
    pub blue: f64,
    pub nir: f64,
}

impl IndexKind {
    /// Evaluates the index on already-extracted channel values.
    pub fn evaluate(self, c: Channels) -> IndexValue {
        let Channels {
            red: r,
            green: g,
            blue: b,
            nir: n,
        } = c;
        match self {
            IndexKind::Ndvi => ratio(n - r, n + r),
            IndexKind::Mgrvi => ratio(g * g - r * r, g * g + r * r),
            IndexKind::Gli => ratio(2.0 * g - r - b, 2.0 * g + r + b),
            IndexKind::Mpri => ratio(g - r, g + r),
            IndexKind::Rgbvi => ratio(g * g - b * r, g * g + b * r),
            IndexKind::Exg => IndexValue::ok(2.0 * g - r - b),
            IndexKind::Exr => IndexValue::ok(1.4 * r - g),
            IndexKind::Exgr => IndexValue::ok((2.0 * g - r - b) - (1.4 * r - g)),
            IndexKind::Veg => ratio(g, r.powf(0.667) * b.powf(0.333)),
            IndexKind::Evi => ratio(2.5 * (n - r), n + 6.0 * r - 7.5 * b + 1.0),
        }
    }
}

/// An index bound to a band grid, with band positions resolved once.
#[derive(Clone, Debug)]
pub struct IndexEvaluator {
    kind: IndexKind,
    grid: BandGrid,
    red: Option<usize>,
    green: Option<usize>,
    blue: Option<usize>,
    nir: Option<usize>,
}

impl IndexEvaluator {
    pub fn new(kind: IndexKind, grid: &BandGrid, bands: &BandSelection) -> Result<Self> {
        let mut ev = IndexEvaluator {
            kind,
            grid: grid.clone(),
            red: None,
            green: None,
            blue: None,
            nir: None,
        };
        for &ch in kind.channels() {
            let idx = Some(bands.resolve(grid, ch)?);
            match ch {
                Channel::Red => ev.red = idx,
                Channel::Green => ev.green = idx,
                Channel::Blue => ev.blue = idx,
                Channel::Nir => ev.nir = idx,
            }
        }
        Ok(ev)
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn grid(&self) -> &BandGrid {
        &self.grid
    }

    /// Evaluates on raw band values laid out on the evaluator's grid.
    pub fn evaluate_values(&self, values: &[f64]) -> IndexValue {
        let get = |i: Option<usize>| i.map_or(0.0, |i| values[i]);
        self.kind.evaluate(Channels {
            red: get(self.red),
            green: get(self.green),
            blue: get(self.blue),
            nir: get(self.nir),
        })
    }

    pub fn evaluate(&self, spectrum: &ReflectanceSpectrum) -> Result<IndexValue> {
        if spectrum.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.evaluate_values(spectrum.values()))
    }
}

/// Computes `kind` on a reflectance spectrum.
pub fn vegetation_index(
    kind: IndexKind,
    spectrum: &ReflectanceSpectrum,
    bands: &BandSelection,
) -> Result<IndexValue> {
    IndexEvaluator::new(kind, spectrum.grid(), bands)?.evaluate(spectrum)
}
