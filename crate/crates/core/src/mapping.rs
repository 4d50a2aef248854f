//! World-frame voxel map of mass-density points and its flattening into the
//! 2D mass-density grid.
//!
//! Cells are indexed in absolute world coordinates: cell `(i, j)` covers
//! `[i*s, (i+1)*s) x [j*s, (j+1)*s)` for cell size `s`, so grids built from
//! different data line up exactly.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{AugmentedPoint, Frame, RigidTransform};
use crate::spectral::BandGrid;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;
pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const DEFAULT_RANSAC_THRESHOLD: f64 = 0.05;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 200;

/// Slack for floating-point cell boundary tests (m).
const BOUNDARY_EPS: f64 = 1e-9;

/// Sensor-to-world pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub sensor_to_world: RigidTransform,
    pub timestamp: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            sensor_to_world: RigidTransform::identity(),
            timestamp: 0.0,
        }
    }
}

/// Plane `normal · p = offset`, normal pointing up.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_threshold: f64,
}

impl GroundPlane {
    /// Horizontal plane `z = height`.
    pub fn horizontal(height: f64, inlier_threshold: f64) -> Self {
        GroundPlane {
            normal: Vector3::z(),
            offset: height,
            inlier_threshold,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn is_inlier(&self, p: &Vector3<f64>) -> bool {
        self.signed_distance(p).abs() <= self.inlier_threshold
    }
}

fn orient_up(mut n: Vector3<f64>) -> Vector3<f64> {
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.y != 0.0 {
        n.y < 0.0
    } else {
        n.x < 0.0
    };
    if flip {
        n = -n;
    }
    n
}

/// Total-least-squares plane: centroid plus the covariance eigenvector with
/// the smallest eigenvalue. Also returns the eigenvalues, ascending.
fn fit_plane(points: &[&Vector3<f64>]) -> (Vector3<f64>, f64, [f64; 3]) {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + **p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = **p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let normal = orient_up(eig.eigenvectors.column(order[0]).normalize());
    let values = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    (normal, normal.dot(&centroid), values)
}

/// RANSAC ground plane: best inlier count over `iterations` random
/// three-point samples, refit by least squares on the inliers.
///
/// Bit-deterministic for a given seed.
pub fn ransac_ground_plane(
    points: &[Vector3<f64>],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<GroundPlane> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid("ransac threshold", "must be positive"));
    }
    if iterations == 0 {
        return Err(Error::invalid("ransac iterations", "must be at least 1"));
    }
    if points.len() < 3 {
        return Err(Error::DegeneratePoints("plane fit needs at least 3 points"));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("points", "non-finite coordinate"));
    }
    let all: Vec<&Vector3<f64>> = points.iter().collect();
    let (_, _, spread) = fit_plane(&all);
    if spread[1] <= 1e-12 * spread[2].max(f64::MIN_POSITIVE) {
        return Err(Error::DegeneratePoints("points are collinear"));
    }
    let scale = spread[2].sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..iterations {
        let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
        let (a, b, c) = (
            &points[idx.index(0)],
            &points[idx.index(1)],
            &points[idx.index(2)],
        );
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        if norm <= 1e-9 * scale * scale {
            continue;
        }
        let n = cross / norm;
        let d = n.dot(a);
        let count = points
            .iter()
            .filter(|p| (n.dot(p) - d).abs() <= threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, n, d));
        }
    }

    let inliers: Vec<&Vector3<f64>> = match best {
        Some((_, n, d)) => points
            .iter()
            .filter(|p| (n.dot(p) - d).abs() <= threshold)
            .collect(),
        // every sample was degenerate; fall back to all points
        None => all,
    };
    let (normal, offset, _) = fit_plane(&inliers);
    Ok(GroundPlane {
        normal,
        offset,
        inlier_threshold: threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

/// Per-voxel aggregate. Sums rather than running means keep the result
/// independent of insertion order up to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelAggregate {
    pub count: u64,
    position_sum: Vector3<f64>,
    reflectance_sum: Option<(BandGrid, Vec<f64>)>,
    reflectance_count: u64,
    plants_sum: f64,
    plants_count: u64,
    pub max_density: Option<f64>,
}

impl VoxelAggregate {
    fn new() -> Self {
        VoxelAggregate {
            count: 0,
            position_sum: Vector3::zeros(),
            reflectance_sum: None,
            reflectance_count: 0,
            plants_sum: 0.0,
            plants_count: 0,
            max_density: None,
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.position_sum / self.count as f64
    }

    pub fn mean_reflectance(&self) -> Option<Vec<f64>> {
        let (_, sum) = self.reflectance_sum.as_ref()?;
        let n = self.reflectance_count as f64;
        Some(sum.iter().map(|v| v / n).collect())
    }

    pub fn mean_plants_probability(&self) -> Option<f64> {
        (self.plants_count > 0).then(|| self.plants_sum / self.plants_count as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InsertStats {
    pub inserted: usize,
    pub skipped_non_finite: usize,
    /// Spectra on a band grid different from the voxel's first one.
    pub skipped_spectra: usize,
}

/// Sparse voxel map in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMap {
    voxel_size: f64,
    cells: BTreeMap<VoxelKey, VoxelAggregate>,
}

impl VoxelMap {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::invalid("voxel_size", "must be positive"));
        }
        Ok(VoxelMap {
            voxel_size,
            cells: BTreeMap::new(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn voxels(&self) -> impl Iterator<Item = (&VoxelKey, &VoxelAggregate)> {
        self.cells.iter()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&VoxelAggregate> {
        self.cells.get(key)
    }

    pub fn key_of(&self, p: &Vector3<f64>) -> VoxelKey {
        VoxelKey {
            i: (p.x / self.voxel_size).floor() as i64,
            j: (p.y / self.voxel_size).floor() as i64,
            k: (p.z / self.voxel_size).floor() as i64,
        }
    }

    pub fn voxel_center(&self, key: &VoxelKey) -> Vector3<f64> {
        Vector3::new(
            (key.i as f64 + 0.5) * self.voxel_size,
            (key.j as f64 + 0.5) * self.voxel_size,
            (key.k as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Voxel centroids, usable as RANSAC input.
    pub fn centroids(&self) -> Vec<Vector3<f64>> {
        self.cells.values().map(VoxelAggregate::centroid).collect()
    }

    /// Merges a cloud into the map. Sensor-frame points go through `pose`;
    /// world-frame points are taken as they are.
    pub fn insert_cloud(&mut self, cloud: &[AugmentedPoint], pose: &Pose) -> InsertStats {
        let mut stats = InsertStats::default();
        for p in cloud {
            let world = match p.frame {
                Frame::Sensor => pose.sensor_to_world.apply(&p.position),
                Frame::World => p.position,
            };
            if !world.iter().all(|v| v.is_finite()) {
                stats.skipped_non_finite += 1;
                continue;
            }
            let key = self.key_of(&world);
            let agg = self.cells.entry(key).or_insert_with(VoxelAggregate::new);
            agg.count += 1;
            agg.position_sum += world;
            if let Some(r) = &p.reflectance {
                match &mut agg.reflectance_sum {
                    None => {
                        agg.reflectance_sum = Some((r.grid().clone(), r.values().to_vec()));
                        agg.reflectance_count = 1;
                    }
                    Some((grid, sum)) if grid == r.grid() => {
                        sum.iter_mut().zip(r.values()).for_each(|(s, v)| *s += v);
                        agg.reflectance_count += 1;
                    }
                    Some(_) => stats.skipped_spectra += 1,
                }
            }
            if let Some(prob) = p.plants_probability {
                agg.plants_sum += prob;
                agg.plants_count += 1;
            }
            if let Some(d) = p.mass_density {
                agg.max_density = Some(agg.max_density.map_or(d, |m: f64| m.max(d)));
            }
            stats.inserted += 1;
        }
        stats
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Unknown,
    Observed,
}

/// 2D grid of mass density (kg/m²).
///
/// Unknown cells, and every cell outside the grid, hold the initialization
/// density.
#[derive(Clone, Debug, PartialEq)]
pub struct MassDensityGrid {
    cell_size: f64,
    origin_cell: (i64, i64),
    width: usize,
    height: usize,
    values: Vec<f64>,
    states: Vec<CellState>,
    init_density: f64,
}

impl MassDensityGrid {
    /// All-unknown grid.
    pub fn unknown(
        cell_size: f64,
        origin_cell: (i64, i64),
        width: usize,
        height: usize,
        init_density: f64,
    ) -> Result<Self> {
        MassDensityGrid::from_parts(
            cell_size,
            origin_cell,
            width,
            height,
            vec![init_density; width * height],
            vec![CellState::Unknown; width * height],
            init_density,
        )
    }

    pub fn from_parts(
        cell_size: f64,
        origin_cell: (i64, i64),
        width: usize,
        height: usize,
        values: Vec<f64>,
        states: Vec<CellState>,
        init_density: f64,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::invalid("cell_size", "must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid", "width and height must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: width * height,
                actual: values.len(),
            });
        }
        if states.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "grid state mask",
                expected: width * height,
                actual: states.len(),
            });
        }
        if !(init_density >= 0.0) || !init_density.is_finite() {
            return Err(Error::invalid(
                "init_density",
                "must be finite and non-negative",
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "grid values",
                "densities must be finite and non-negative",
            ));
        }
        if values
            .iter()
            .zip(&states)
            .any(|(v, s)| *s == CellState::Unknown && *v != init_density)
        {
            return Err(Error::invalid(
                "grid values",
                "unknown cells must hold the initialization density",
            ));
        }
        Ok(MassDensityGrid {
            cell_size,
            origin_cell,
            width,
            height,
            values,
            states,
            init_density,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// `a_c`, in m².
    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Absolute index of the lower-left cell.
    pub fn origin_cell(&self) -> (i64, i64) {
        self.origin_cell
    }

    /// World coordinates of the lower-left corner.
    pub fn origin(&self) -> (f64, f64) {
        (
            self.origin_cell.0 as f64 * self.cell_size,
            self.origin_cell.1 as f64 * self.cell_size,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn init_density(&self) -> f64 {
        self.init_density
    }

    /// Row-major values, row 0 at the lowest y.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn states(&self) -> &[CellState] {
        &self.states
    }

    /// Absolute cell containing a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.cell_size).floor() as i64,
            (y / self.cell_size).floor() as i64,
        )
    }

    fn local(&self, cell: (i64, i64)) -> Option<usize> {
        let c = cell.0 - self.origin_cell.0;
        let r = cell.1 - self.origin_cell.1;
        if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
            None
        } else {
            Some(r as usize * self.width + c as usize)
        }
    }

    pub fn contains(&self, cell: (i64, i64)) -> bool {
        self.local(cell).is_some()
    }

    /// Density of an absolute cell; out-of-grid cells are unknown.
    pub fn density(&self, cell: (i64, i64)) -> f64 {
        self.local(cell)
            .map_or(self.init_density, |i| self.values[i])
    }

    pub fn state(&self, cell: (i64, i64)) -> CellState {
        self.local(cell)
            .map_or(CellState::Unknown, |i| self.states[i])
    }

    pub fn set(&mut self, cell: (i64, i64), density: f64, state: CellState) -> Result<()> {
        let i = self
            .local(cell)
            .ok_or_else(|| Error::invalid("cell", "outside the grid"))?;
        if !(density >= 0.0) || !density.is_finite() {
            return Err(Error::invalid("density", "must be finite and non-negative"));
        }
        self.values[i] = density;
        self.states[i] = state;
        Ok(())
    }

    /// Iterates `(absolute cell, density, state)` row by row.
    pub fn cells(&self) -> impl Iterator<Item = ((i64, i64), f64, CellState)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).map(move |c| {
                let i = r * self.width + c;
                (
                    (self.origin_cell.0 + c as i64, self.origin_cell.1 + r as i64),
                    self.values[i],
                    self.states[i],
                )
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlattenParams {
    /// Height above ground beyond which voxels are overhead (m).
    pub ugv_height: f64,
    /// Robot mass (kg); unknown cells get this value as a density in kg/m².
    pub robot_mass: f64,
    pub cell_size: f64,
}

/// Range of absolute cell indices overlapped (with positive length) by
/// `[lo, hi)`.
fn overlapped_cells(lo: f64, hi: f64, cell: f64) -> (i64, i64) {
    let first = (lo / cell + BOUNDARY_EPS).floor() as i64;
    let last = (hi / cell - BOUNDARY_EPS).ceil() as i64 - 1;
    (first, last.max(first))
}

/// Flattens the voxel map into a mass-density grid.
///
/// A voxel is dropped as ground when its lowest point along the plane normal
/// lies within the plane's inlier threshold (or below the plane), and as
/// overhead when its lowest point is above `ugv_height`. Every cell whose
/// footprint a voxel overlaps becomes observed; observed cells take the
/// maximum density of their surviving voxels, or 0 when none survive.
/// Surviving voxels without a density (no spectral measurement) count as
/// unknown matter at the initialization density.
pub fn flatten_to_grid(
    map: &VoxelMap,
    ground: &GroundPlane,
    params: &FlattenParams,
) -> Result<MassDensityGrid> {
    if !(params.ugv_height > 0.0) {
        return Err(Error::invalid("ugv_height", "must be positive"));
    }
    if !(params.robot_mass > 0.0) || !params.robot_mass.is_finite() {
        return Err(Error::invalid("robot_mass", "must be positive"));
    }
    if !(params.cell_size > 0.0) || !params.cell_size.is_finite() {
        return Err(Error::invalid("cell_size", "must be positive"));
    }
    let init = params.robot_mass;
    if map.is_empty() {
        return MassDensityGrid::unknown(params.cell_size, (0, 0), 1, 1, init);
    }

    let vs = map.voxel_size();
    let footprint = |k: &VoxelKey| {
        let x = overlapped_cells(k.i as f64 * vs, (k.i + 1) as f64 * vs, params.cell_size);
        let y = overlapped_cells(k.j as f64 * vs, (k.j + 1) as f64 * vs, params.cell_size);
        (x, y)
    };
    let (mut cmin, mut cmax) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
    for (key, _) in map.voxels() {
        let ((x0, x1), (y0, y1)) = footprint(key);
        cmin = (cmin.0.min(x0), cmin.1.min(y0));
        cmax = (cmax.0.max(x1), cmax.1.max(y1));
    }
    let width = (cmax.0 - cmin.0 + 1) as usize;
    let height = (cmax.1 - cmin.1 + 1) as usize;
    let mut grid = MassDensityGrid::unknown(params.cell_size, cmin, width, height, init)?;

    let n = ground.normal;
    let half_extent = 0.5 * vs * (n.x.abs() + n.y.abs() + n.z.abs());
    for (key, agg) in map.voxels() {
        let lowest = ground.signed_distance(&map.voxel_center(key)) - half_extent;
        let survives = lowest > ground.inlier_threshold && lowest <= params.ugv_height;
        let density = agg.max_density.unwrap_or(init);
        let ((x0, x1), (y0, y1)) = footprint(key);
        for j in y0..=y1 {
            for i in x0..=x1 {
                let idx = grid.local((i, j)).expect("footprint inside bounds");
                if grid.states[idx] == CellState::Unknown {
                    grid.states[idx] = CellState::Observed;
                    grid.values[idx] = 0.0;
                }
                if survives && density > grid.values[idx] {
                    grid.values[idx] = density;
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn point(x: f64, y: f64, z: f64, density: Option<f64>) -> AugmentedPoint {
        AugmentedPoint {
            mass_density: density,
            ..AugmentedPoint::bare(Vector3::new(x, y, z), Frame::World)
        }
    }

    fn params() -> FlattenParams {
        FlattenParams {
            ugv_height: 1.5,
            robot_mass: 250.0,
            cell_size: 0.5,
        }
    }

    /// Least-squares plane on a known inlier set, via the normal equations
    /// for z = a x + b y + c.
    fn lsq_oracle(pts: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for p in pts {
            let row = Vector3::new(p.x, p.y, 1.0);
            ata += row * row.transpose();
            atb += row * p.z;
        }
        let s = ata.try_inverse().unwrap() * atb;
        let n = Vector3::new(-s.x, -s.y, 1.0);
        let norm = n.norm();
        (n / norm, s.z / norm)
    }

    #[test]
    fn ransac_recovers_plane_with_outliers() {
        let mut pts: Vec<Vector3<f64>> = (0..100)
            .map(|i| Vector3::new((i % 10) as f64 * 0.3, (i / 10) as f64 * 0.3, 0.0))
            .collect();
        let inliers = pts.clone();
        pts.extend((0..10).map(|i| Vector3::new(i as f64 * 0.2, 0.5, 5.0)));
        let plane = ransac_ground_plane(&pts, 0.05, 100, 7).unwrap();
        let (n, d) = lsq_oracle(&inliers);
        assert_abs_diff_eq!(plane.normal, n, epsilon = 1e-6);
        assert_abs_diff_eq!(plane.normal, Vector3::z(), epsilon = 1e-6);
        assert_abs_diff_eq!(plane.offset, d, epsilon = 1e-6);
    }

    #[test]
    fn ransac_exact_plane() {
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|i| Vector3::new((i % 7) as f64, (i / 7) as f64, 1.0))
            .collect();
        let plane = ransac_ground_plane(&pts, 0.01, 20, 1).unwrap();
        assert_abs_diff_eq!(plane.offset, 1.0, epsilon = 1e-12);
        assert!(pts.iter().all(|p| plane.is_inlier(p)));
    }

    #[test]
    fn ransac_degenerate_inputs() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(
            ransac_ground_plane(&two, 0.1, 10, 0),
            Err(Error::DegeneratePoints(_))
        ));
        let line: Vec<_> = (0..10)
            .map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(
            ransac_ground_plane(&line, 0.1, 10, 0),
            Err(Error::DegeneratePoints(_))
        ));
        let pts: Vec<_> = (0..10)
            .map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0))
            .collect();
        assert!(ransac_ground_plane(&pts, 0.0, 10, 0).is_err());
    }

    #[test]
    fn ransac_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                let x: f64 = rng.random_range(-5.0..5.0);
                let y: f64 = rng.random_range(-5.0..5.0);
                let z = if rng.random_bool(0.2) {
                    rng.random_range(0.0..3.0)
                } else {
                    0.1 * x + rng.random_range(-0.01..0.01)
                };
                Vector3::new(x, y, z)
            })
            .collect();
        let a = ransac_ground_plane(&pts, 0.05, 100, 42).unwrap();
        let b = ransac_ground_plane(&pts, 0.05, 100, 42).unwrap();
        assert_eq!(a.normal.map(f64::to_bits), b.normal.map(f64::to_bits));
        assert_eq!(a.offset.to_bits(), b.offset.to_bits());
        assert!(a.normal.z > 0.0);
    }

    #[test]
    fn insert_examples() {
        let mut map = VoxelMap::new(0.5).unwrap();
        let before = map.clone();
        map.insert_cloud(&[], &Pose::identity());
        assert_eq!(map, before);

        map.insert_cloud(&[point(1.26, 0.0, 0.0, Some(20.0))], &Pose::identity());
        let key = map.voxels().next().unwrap().0;
        assert_eq!(key.i, 2);

        let mut m = VoxelMap::new(0.2).unwrap();
        m.insert_cloud(
            &[
                point(0.05, 0.05, 0.5, Some(20.0)),
                point(0.1, 0.1, 0.55, Some(2400.0)),
            ],
            &Pose::identity(),
        );
        assert_eq!(m.len(), 1);
        assert_eq!(m.voxels().next().unwrap().1.max_density, Some(2400.0));
    }

    #[test]
    fn insert_applies_pose_to_sensor_points() {
        let mut map = VoxelMap::new(1.0).unwrap();
        let pose = Pose {
            sensor_to_world: RigidTransform::from_translation(Vector3::new(10.0, 0.0, 0.0)),
            timestamp: 0.0,
        };
        let p = AugmentedPoint::bare(Vector3::new(0.5, 0.5, 0.5), Frame::Sensor);
        map.insert_cloud(&[p], &pose);
        assert_eq!(map.voxels().next().unwrap().0.i, 10);
    }

    #[test]
    fn flatten_column_filtering() {
        let mut map = VoxelMap::new(0.2).unwrap();
        map.insert_cloud(
            &[
                point(0.1, 0.1, 0.02, Some(2400.0)), // ground
                point(0.1, 0.1, 0.7, Some(20.0)),
                point(0.1, 0.1, 2.3, Some(2400.0)), // overhead
            ],
            &Pose::identity(),
        );
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!((g.width(), g.height()), (1, 1));
        assert_eq!(g.density((0, 0)), 20.0);
        assert_eq!(g.state((0, 0)), CellState::Observed);
    }

    #[test]
    fn flatten_takes_column_max() {
        let mut map = VoxelMap::new(0.2).unwrap();
        map.insert_cloud(
            &[
                point(0.1, 0.1, 0.5, Some(20.0)),
                point(0.1, 0.1, 0.9, Some(2400.0)),
            ],
            &Pose::identity(),
        );
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!(g.density((0, 0)), 2400.0);
    }

    #[test]
    fn flatten_ground_only_cell_is_free_and_empty_map_unknown() {
        let mut map = VoxelMap::new(0.2).unwrap();
        map.insert_cloud(&[point(0.1, 0.1, 0.0, Some(2400.0))], &Pose::identity());
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!(g.density((0, 0)), 0.0);

        let empty = VoxelMap::new(0.2).unwrap();
        let g = flatten_to_grid(&empty, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!((g.width(), g.height()), (1, 1));
        assert_eq!(g.state((0, 0)), CellState::Unknown);
        assert_eq!(g.density((0, 0)), 250.0);
        // outside the grid is unknown too
        assert_eq!(g.density((5, -3)), 250.0);
    }

    #[test]
    fn flatten_point_without_density_is_unknown_matter() {
        let mut map = VoxelMap::new(0.2).unwrap();
        map.insert_cloud(&[point(0.1, 0.1, 0.7, None)], &Pose::identity());
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!(g.density((0, 0)), 250.0);
        assert_eq!(g.state((0, 0)), CellState::Observed);
    }

    #[test]
    fn straddling_voxel_marks_both_cells() {
        let mut map = VoxelMap::new(0.2).unwrap();
        // voxel [0.4, 0.6) straddles the 0.5 m cell boundary
        map.insert_cloud(&[point(0.45, 0.1, 0.7, Some(20.0))], &Pose::identity());
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.0, 0.05), &params()).unwrap();
        assert_eq!(g.width(), 2);
        assert_eq!(g.density((0, 0)), 20.0);
        assert_eq!(g.density((1, 0)), 20.0);
    }

    #[test]
    fn ground_filter_removes_every_point_within_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut map = VoxelMap::new(0.2).unwrap();
        let pts: Vec<AugmentedPoint> = (0..2000)
            .map(|_| {
                point(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    0.3 + rng.random_range(-0.05..=0.05),
                    Some(2400.0),
                )
            })
            .collect();
        map.insert_cloud(&pts, &Pose::identity());
        let g = flatten_to_grid(&map, &GroundPlane::horizontal(0.3, 0.05), &params()).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_rejects_bad_parts() {
        assert!(MassDensityGrid::from_parts(
            0.5,
            (0, 0),
            1,
            1,
            vec![-1.0],
            vec![CellState::Observed],
            250.0
        )
        .is_err());
        assert!(MassDensityGrid::from_parts(
            0.5,
            (0, 0),
            1,
            1,
            vec![3.0],
            vec![CellState::Unknown],
            250.0
        )
        .is_err());
        assert!(MassDensityGrid::from_parts(
            0.5,
            (0, 0),
            2,
            1,
            vec![3.0],
            vec![CellState::Observed],
            250.0
        )
        .is_err());
    }

    fn cloud_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
        prop::collection::vec(
            (-2.0f64..2.0, -2.0f64..2.0, 0.0f64..2.0, 0.0f64..2400.0),
            1..60,
        )
    }

    proptest! {
        #[test]
        fn insertion_order_does_not_matter(a in cloud_strategy(), b in cloud_strategy()) {
            let to_pts = |v: &[(f64, f64, f64, f64)]| -> Vec<AugmentedPoint> {
                v.iter().map(|&(x, y, z, d)| point(x, y, z, Some(d))).collect()
            };
            let (pa, pb) = (to_pts(&a), to_pts(&b));
            let mut m1 = VoxelMap::new(0.2).unwrap();
            m1.insert_cloud(&pa, &Pose::identity());
            m1.insert_cloud(&pb, &Pose::identity());
            let mut m2 = VoxelMap::new(0.2).unwrap();
            m2.insert_cloud(&pb, &Pose::identity());
            m2.insert_cloud(&pa, &Pose::identity());
            let ground = GroundPlane::horizontal(0.0, 0.05);
            let g1 = flatten_to_grid(&m1, &ground, &params()).unwrap();
            let g2 = flatten_to_grid(&m2, &ground, &params()).unwrap();
            prop_assert_eq!(&g1, &g2);
            for ((k1, v1), (k2, v2)) in m1.voxels().zip(m2.voxels()) {
                prop_assert_eq!(k1, k2);
                prop_assert!((v1.centroid() - v2.centroid()).amax() < 1e-9);
            }
        }

        #[test]
        fn adding_in_band_voxel_never_lowers_observed_cells(a in cloud_strategy(),
                                                           x in -2.0f64..2.0, y in -2.0f64..2.0,
                                                           z in 0.3f64..1.2, d in 0.0f64..2400.0) {
            let pts: Vec<AugmentedPoint> = a.iter().map(|&(x, y, z, d)| point(x, y, z, Some(d))).collect();
            let mut map = VoxelMap::new(0.2).unwrap();
            map.insert_cloud(&pts, &Pose::identity());
            let ground = GroundPlane::horizontal(0.0, 0.05);
            let before = flatten_to_grid(&map, &ground, &params()).unwrap();
            map.insert_cloud(&[point(x, y, z, Some(d))], &Pose::identity());
            let after = flatten_to_grid(&map, &ground, &params()).unwrap();
            for (cell, v, s) in before.cells() {
                if s == CellState::Observed {
                    prop_assert!(after.density(cell) >= v);
                }
            }
        }
    }
}
