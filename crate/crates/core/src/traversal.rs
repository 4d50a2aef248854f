//! Velocity-loss coefficient of a robot crossing matter of known areal mass
//! density, and selection of the safest candidate path.
//!
//! A robot of mass `m_R` colliding inelastically with a mass `m_i` keeps a
//! fraction `m_R / (m_R + m_i)` of its velocity. Chaining collisions over
//! the area a path sweeps gives a product that tends to
//! `exp(-(1/m_R) ∫ d_m da)`.

use std::collections::BTreeSet;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::MassDensityGrid;

/// Slack used when deciding whether a footprint covers a cell with positive
/// area (m).
const OVERLAP_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub mass_kg: f64,
    pub width_m: f64,
    pub height_m: f64,
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("robot.mass_kg", self.mass_kg),
            ("robot.width_m", self.width_m),
            ("robot.height_m", self.height_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec {
            mass_kg: 250.0,
            width_m: 0.4,
            height_m: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    pub id: String,
    /// World `(x, y)` waypoints (m).
    pub waypoints: Vec<[f64; 2]>,
    /// Swept width (m).
    pub width: f64,
}

impl PathCandidate {
    pub fn new(id: impl Into<String>, waypoints: Vec<[f64; 2]>, width: f64) -> Result<Self> {
        let c = PathCandidate {
            id: id.into(),
            waypoints,
            width,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid(
                "waypoints",
                format!("path `{}` needs at least 2 waypoints", self.id),
            ));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "waypoints",
                format!("path `{}` has a non-finite coordinate", self.id),
            ));
        }
        if self.waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(
                "waypoints",
                format!("path `{}` repeats a waypoint", self.id),
            ));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::invalid(
                "width",
                format!("path `{}` needs a positive width", self.id),
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellContribution {
    /// Absolute cell index.
    pub cell: (i64, i64),
    pub density: f64,
    /// `density * a_c` (kg).
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalCost {
    /// Retained velocity ratio, in (0, 1]. Floored at the smallest positive
    /// double when the exponential underflows; `log_alpha` stays exact.
    pub alpha: f64,
    pub log_alpha: f64,
    /// m².
    pub crossed_area: f64,
    /// kg.
    pub integrated_mass: f64,
    pub cells: Vec<CellContribution>,
}

impl TraversalCost {
    pub fn kinetic_energy_loss(&self) -> f64 {
        kinetic_energy_loss(self.alpha)
    }
}

fn check_mass(m_r: f64) -> Result<()> {
    if !(m_r > 0.0) || !m_r.is_finite() {
        return Err(Error::invalid("robot mass", "must be positive"));
    }
    Ok(())
}

/// Velocity ratio after one inelastic collision.
pub fn collision_alpha(m_r: f64, m_i: f64) -> Result<f64> {
    check_mass(m_r)?;
    if !(m_i >= 0.0) || !m_i.is_finite() {
        return Err(Error::invalid(
            "obstacle mass",
            "must be finite and non-negative",
        ));
    }
    Ok(m_r / (m_r + m_i))
}

/// Product of per-particle collision ratios for particles of area `delta_a`.
///
/// Evaluated as `exp(-Σ ln(1 + d Δa / m_R))`, which stays accurate for
/// millions of particles.
pub fn alpha_discrete(m_r: f64, densities: &[f64], delta_a: f64) -> Result<f64> {
    check_mass(m_r)?;
    if !(delta_a > 0.0) || !delta_a.is_finite() {
        return Err(Error::invalid("delta_a", "must be positive"));
    }
    let mut log = 0.0;
    for &d in densities {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::invalid("density", "must be finite and non-negative"));
        }
        log += (d * delta_a / m_r).ln_1p();
    }
    Ok((-log).exp())
}

/// Limit of [`alpha_discrete`] for vanishing particle area.
pub fn alpha_continuous(m_r: f64, density_integral: f64) -> Result<f64> {
    check_mass(m_r)?;
    if !(density_integral >= 0.0) || !density_integral.is_finite() {
        return Err(Error::invalid(
            "density integral",
            "must be finite and non-negative",
        ));
    }
    Ok((-density_integral / m_r).exp())
}

/// Cost of crossing `cells` with density constant inside each cell. Cells
/// outside the grid count at the initialization density.
pub fn alpha_grid(m_r: f64, grid: &MassDensityGrid, cells: &[(i64, i64)]) -> Result<TraversalCost> {
    check_mass(m_r)?;
    let a_c = grid.cell_area();
    let contributions: Vec<CellContribution> = cells
        .iter()
        .map(|&cell| {
            let density = grid.density(cell);
            CellContribution {
                cell,
                density,
                mass: density * a_c,
            }
        })
        .collect();
    let integrated_mass: f64 = contributions.iter().map(|c| c.mass).sum();
    // 0 - x keeps a free path at +0 rather than -0
    let log_alpha = 0.0 - integrated_mass / m_r;
    Ok(TraversalCost {
        alpha: log_alpha.exp().max(f64::MIN_POSITIVE),
        log_alpha,
        crossed_area: a_c * cells.len() as f64,
        integrated_mass,
        cells: contributions,
    })
}

/// Fraction of kinetic energy lost for a velocity ratio `alpha`.
pub fn kinetic_energy_loss(alpha: f64) -> f64 {
    1.0 - alpha * alpha
}

type P2 = [f64; 2];

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Rectangle swept by a segment of the given width, without end caps.
fn segment_rectangle(a: P2, b: P2, width: f64) -> [P2; 4] {
    let d = sub(b, a);
    let len = d[0].hypot(d[1]);
    let h = 0.5 * width;
    let n = [-d[1] / len * h, d[0] / len * h];
    [
        [a[0] + n[0], a[1] + n[1]],
        [b[0] + n[0], b[1] + n[1]],
        [b[0] - n[0], b[1] - n[1]],
        [a[0] - n[0], a[1] - n[1]],
    ]
}

fn cell_square(cell: (i64, i64), s: f64) -> [P2; 4] {
    let (x0, y0) = (cell.0 as f64 * s, cell.1 as f64 * s);
    [[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
}

fn project(poly: &[P2], axis: P2) -> (f64, f64) {
    poly.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let v = dot(*p, axis);
            (lo.min(v), hi.max(v))
        })
}

/// Separating-axis test for two convex quadrilaterals; touching along an
/// edge or corner does not count as overlap.
fn quads_overlap(a: &[P2; 4], b: &[P2; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let e = sub(poly[(i + 1) % 4], poly[i]);
            let len = e[0].hypot(e[1]);
            let axis = [-e[1] / len, e[0] / len];
            let (alo, ahi) = project(a, axis);
            let (blo, bhi) = project(b, axis);
            if ahi.min(bhi) - alo.max(blo) <= OVERLAP_EPS {
                return false;
            }
        }
    }
    true
}

fn disk_overlaps_cell(c: P2, r: f64, cell: (i64, i64), s: f64) -> bool {
    let (x0, y0) = (cell.0 as f64 * s, cell.1 as f64 * s);
    let dx = c[0] - c[0].clamp(x0, x0 + s);
    let dy = c[1] - c[1].clamp(y0, y0 + s);
    dx.hypot(dy) < r - OVERLAP_EPS
}

fn cell_range(lo: f64, hi: f64, s: f64) -> std::ops::RangeInclusive<i64> {
    (lo / s).floor() as i64..=(hi / s).floor() as i64
}

/// Cells covered with positive area by the path swept to its width.
///
/// The footprint is the union of one rectangle per segment and a disk of
/// diameter `width` at every interior waypoint, so turns leave no gaps.
/// Returned sorted, each cell once.
pub fn rasterize_path(path: &PathCandidate, grid: &MassDensityGrid) -> Result<Vec<(i64, i64)>> {
    path.validate()?;
    let s = grid.cell_size();
    let mut cells = BTreeSet::new();
    for w in path.waypoints.windows(2) {
        let rect = segment_rectangle(w[0], w[1], path.width);
        let (xlo, xhi) = rect
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
                (l.min(p[0]), h.max(p[0]))
            });
        let (ylo, yhi) = rect
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
                (l.min(p[1]), h.max(p[1]))
            });
        for j in cell_range(ylo, yhi, s) {
            for i in cell_range(xlo, xhi, s) {
                if !cells.contains(&(i, j)) && quads_overlap(&rect, &cell_square((i, j), s)) {
                    cells.insert((i, j));
                }
            }
        }
    }
    let r = 0.5 * path.width;
    for c in &path.waypoints[1..path.waypoints.len() - 1] {
        for j in cell_range(c[1] - r, c[1] + r, s) {
            for i in cell_range(c[0] - r, c[0] + r, s) {
                if disk_overlaps_cell(*c, r, (i, j), s) {
                    cells.insert((i, j));
                }
            }
        }
    }
    Ok(cells.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub id: String,
    pub length_m: f64,
    pub cost: TraversalCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub costs: Vec<CandidateCost>,
    pub selected: String,
}

/// Scores every candidate and selects the one retaining the most velocity.
///
/// Ties go to the shorter path, then to the lexicographically smaller id.
pub fn evaluate_candidates(
    candidates: &[PathCandidate],
    grid: &MassDensityGrid,
    robot: &RobotSpec,
) -> Result<Evaluation> {
    robot.validate()?;
    if candidates.is_empty() {
        return Err(Error::invalid(
            "candidates",
            "need at least one candidate path",
        ));
    }
    let score = |c: &PathCandidate| -> Result<CandidateCost> {
        let cells = rasterize_path(c, grid)?;
        Ok(CandidateCost {
            id: c.id.clone(),
            length_m: c.length(),
            cost: alpha_grid(robot.mass_kg, grid, &cells)?,
        })
    };
    #[cfg(feature = "parallel")]
    let costs: Result<Vec<CandidateCost>> = candidates.par_iter().map(score).collect();
    #[cfg(not(feature = "parallel"))]
    let costs: Result<Vec<CandidateCost>> = candidates.iter().map(score).collect();
    let costs = costs?;

    let best = costs
        .iter()
        .reduce(|best, c| {
            let better = c
                .cost
                .log_alpha
                .total_cmp(&best.cost.log_alpha)
                .then(best.length_m.total_cmp(&c.length_m))
                .then(best.id.cmp(&c.id))
                .is_gt();
            if better {
                c
            } else {
                best
            }
        })
        .expect("non-empty");
    let selected = best.id.clone();
    Ok(Evaluation { costs, selected })
}
