//! Seeded synthetic worlds: labeled spectral point clouds, the camera and
//! LiDAR data that would observe them, and ground-truth masks and grids.
//!
//! A nadir camera flies over the scene in tiles. Every pixel ray yields one
//! LiDAR return: either inside the first primitive volume that "catches" it
//! (with probability `fill`) or on the ground. The return is expressed in the
//! LiDAR frame and its spectrum written to that pixel, so fusing a frame
//! gives every point back its generated spectrum.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CameraIntrinsics, LidarPoint, RigidTransform, SpectralCube};
use crate::mapping::{CellState, MassDensityGrid, Pose};
use crate::semantics::{Label, LabeledPoint, NOT_PLANTS_DENSITY, PLANTS_DENSITY};
use crate::spectral::{BandGrid, ReferenceProfile, ReflectanceSpectrum, REFLECTANCE_CEILING};
use crate::traversal::PathCandidate;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bump(l: f64, centre: f64, width: f64) -> f64 {
    let z = (l - centre) / width;
    (-0.5 * z * z).exp()
}

/// Pigment and structure of a plant, relative to the class's nominal
/// profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantTraits {
    /// Scale of the green reflectance peak.
    pub pigment: f64,
    /// Scale of the NIR plateau.
    pub nir: f64,
    /// Red-edge position offset (nm).
    pub edge_shift_nm: f64,
}

impl PlantTraits {
    pub const NOMINAL: PlantTraits = PlantTraits {
        pigment: 1.0,
        nir: 1.0,
        edge_shift_nm: 0.0,
    };
}

/// Ranges from which each plant primitive draws its traits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantVariability {
    pub pigment: [f64; 2],
    pub nir: [f64; 2],
    pub edge_shift_nm: [f64; 2],
}

impl PlantVariability {
    fn draw(&self, rng: &mut ChaCha8Rng) -> PlantTraits {
        let mut pick = |r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..=r[1])
            }
        };
        PlantTraits {
            pigment: pick(self.pigment),
            nir: pick(self.nir),
            edge_shift_nm: pick(self.edge_shift_nm),
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [self.pigment, self.nir, self.edge_shift_nm];
        if ranges
            .iter()
            .any(|r| !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite())
            || self.pigment[0] < 0.0
            || self.nir[0] < 0.0
        {
            return Err(Error::invalid(
                "plant_variability",
                "need finite low <= high, scales >= 0",
            ));
        }
        Ok(())
    }
}

/// Parametric reflectance of a class at wavelength `l` (nm).
pub fn class_reflectance(label: Label, l: f64) -> f64 {
    plant_reflectance(label, l, PlantTraits::NOMINAL)
}

/// Like [`class_reflectance`], with the plant classes adjusted by `t`.
pub fn plant_reflectance(label: Label, l: f64, t: PlantTraits) -> f64 {
    match label {
        // chlorophyll: green peak, red absorption, red edge to a NIR plateau
        Label::Vegetation => {
            0.03 + 0.06 * t.pigment * bump(l, 555.0, 35.0)
                + 0.42 * t.nir * sigmoid((l - 715.0 - t.edge_shift_nm) / 12.0)
        }
        Label::Grass => {
            0.05 + 0.07 * t.pigment * bump(l, 555.0, 35.0)
                + 0.30 * t.nir * sigmoid((l - 718.0 - t.edge_shift_nm) / 12.0)
        }
        // bare soil / gravel, nearly flat
        Label::Track => 0.21 + 0.03 * (l - 550.0) / 280.0,
        Label::Building => 0.32 + 0.01 * ((l - 550.0) / 40.0).sin(),
        // green paint: plant-like in the visible, no red edge
        Label::Obstacle => 0.06 + 0.22 * bump(l, 550.0, 30.0) + 0.04 * sigmoid((l - 700.0) / 20.0),
        Label::Pedestrian => 0.12 + 0.10 * sigmoid((l - 620.0) / 25.0),
        // dry litter (straw, dead leaves): soft NIR ramp, no chlorophyll edge
        Label::Other => 0.10 + 0.20 * sigmoid((l - 690.0) / 45.0),
    }
}

pub fn class_profile(label: Label, grid: &BandGrid) -> ReferenceProfile {
    let values = grid
        .as_slice()
        .iter()
        .map(|&l| class_reflectance(label, l))
        .collect();
    ReferenceProfile {
        class_name: label.name().to_string(),
        spectrum: ReflectanceSpectrum::new(grid.clone(), values).expect("profiles lie in [0, 1.5]"),
    }
}

/// One profile per class on the 29-band VNIR grid.
pub fn reference_profiles() -> Vec<ReferenceProfile> {
    let grid = BandGrid::vnir();
    Label::ALL
        .iter()
        .map(|&l| class_profile(l, &grid))
        .collect()
}

/// Reference mass density of a class (kg/m²).
pub fn class_density(label: Label) -> f64 {
    if label.is_plants() {
        PLANTS_DENSITY
    } else {
        NOT_PLANTS_DENSITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned footprint `[min, max]`.
    Box {
        min: [f64; 2],
        max: [f64; 2],
    },
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    /// Ground-cover patch whose top undulates between the middle and the top
    /// of the height range with the given wavelength.
    Heightfield {
        min: [f64; 2],
        max: [f64; 2],
        wavelength: f64,
    },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Box { min, max } => min[0] < max[0] && min[1] < max[1],
            Shape::Disk { radius, center } => *radius > 0.0 && center.iter().all(|v| v.is_finite()),
            Shape::Heightfield {
                min,
                max,
                wavelength,
            } => min[0] < max[0] && min[1] < max[1] && *wavelength > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "primitive.shape",
                "empty or malformed footprint",
            ))
        }
    }

    /// Positive-area overlap with the square `[x0, x0+s) x [y0, y0+s)`.
    fn overlaps_cell(&self, x0: f64, y0: f64, s: f64) -> bool {
        match self {
            Shape::Box { min, max } | Shape::Heightfield { min, max, .. } => {
                min[0] < x0 + s && max[0] > x0 && min[1] < y0 + s && max[1] > y0
            }
            Shape::Disk { center, radius } => {
                let dx = center[0] - center[0].clamp(x0, x0 + s);
                let dy = center[1] - center[1].clamp(y0, y0 + s);
                dx.hypot(dy) < *radius
            }
        }
    }

    /// Ray parameter interval inside the footprint prism.
    fn footprint_interval(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        match self {
            Shape::Box { min, max } | Shape::Heightfield { min, max, .. } => {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for a in 0..2 {
                    if d[a] == 0.0 {
                        if o[a] < min[a] || o[a] >= max[a] {
                            return None;
                        }
                    } else {
                        let t0 = (min[a] - o[a]) / d[a];
                        let t1 = (max[a] - o[a]) / d[a];
                        lo = lo.max(t0.min(t1));
                        hi = hi.min(t0.max(t1));
                    }
                }
                (lo < hi).then_some((lo, hi))
            }
            Shape::Disk { center, radius } => {
                let (px, py) = (o.x - center[0], o.y - center[1]);
                let a = d.x * d.x + d.y * d.y;
                let c = px * px + py * py - radius * radius;
                if a == 0.0 {
                    return (c < 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let b = px * d.x + py * d.y;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
        }
    }

    /// Top of the volume at `(x, y)` for height range `[lo, hi]`.
    fn top(&self, x: f64, y: f64, lo: f64, hi: f64) -> f64 {
        match self {
            Shape::Heightfield { wavelength, .. } => {
                let w = (TAU * x / wavelength).sin() * (TAU * y / wavelength).sin();
                lo + (hi - lo) * (0.75 + 0.25 * w)
            }
            _ => hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub label: Label,
    /// Height range above the ground (m).
    pub height_m: [f64; 2],
    /// Probability that a ray crossing the volume returns from it.
    #[serde(default = "one")]
    pub fill: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ground {
    pub label: Label,
    pub height_m: f64,
    /// `dz/dx, dz/dy`.
    pub slope: [f64; 2],
}

impl Default for Ground {
    fn default() -> Self {
        Ground {
            label: Label::Grass,
            height_m: 0.0,
            slope: [0.0, 0.0],
        }
    }
}

impl Ground {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.height_m + self.slope[0] * x + self.slope[1] * y
    }

    /// Unit upward normal and offset of the ground plane.
    pub fn plane(&self) -> (Vector3<f64>, f64) {
        let n = Vector3::new(-self.slope[0], -self.slope[1], 1.0);
        let norm = n.norm();
        (n / norm, self.height_m / norm)
    }
}

/// Nadir camera flown in tiles over the scene, with a rigidly mounted LiDAR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    /// Above the ground reference height (m).
    pub altitude_m: f64,
    /// Ground footprint of one pixel at nadir (m).
    pub ground_sample_m: f64,
    pub image_px: [u32; 2],
    pub lidar_to_camera: RigidTransform,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            altitude_m: 30.0,
            ground_sample_m: 0.05,
            image_px: [200, 200],
            lidar_to_camera: RigidTransform::from_translation(Vector3::new(0.1, 0.0, -0.05)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Scene covers `[0, x) x [0, y)` (m).
    pub extent_m: [f64; 2],
    #[serde(default)]
    pub ground: Ground,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    #[serde(default = "BandGrid::vnir")]
    pub band_grid: BandGrid,
    /// Per-band Gaussian noise σ (reflectance units).
    #[serde(default)]
    pub noise_sigma: f64,
    /// Per-point brightness factor range (shading). `[1, 1]` disables it.
    #[serde(default = "unit_range")]
    pub illumination: [f64; 2],
    #[serde(default = "default_cell")]
    pub cell_size_m: f64,
    /// Height band in which primitives count for the ground-truth grid (m).
    #[serde(default = "default_truth_band")]
    pub truth_band_m: [f64; 2],
    #[serde(default)]
    pub camera: CameraRig,
    /// Per-primitive plant traits; `None` keeps every plant nominal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_variability: Option<PlantVariability>,
    #[serde(default)]
    pub candidates: Vec<PathCandidate>,
}

fn unit_range() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_cell() -> f64 {
    0.5
}

fn default_truth_band() -> [f64; 2] {
    [0.1, 1.5]
}

impl SceneSpec {
    pub fn new(seed: u64, extent_m: [f64; 2]) -> Self {
        SceneSpec {
            seed,
            extent_m,
            ground: Ground::default(),
            primitives: Vec::new(),
            band_grid: BandGrid::vnir(),
            noise_sigma: 0.0,
            illumination: unit_range(),
            cell_size_m: default_cell(),
            truth_band_m: default_truth_band(),
            camera: CameraRig::default(),
            plant_variability: None,
            candidates: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.extent_m.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::invalid("extent_m", "extents must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(
                "noise_sigma",
                "must be finite and non-negative",
            ));
        }
        let [lo, hi] = self.illumination;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("illumination", "need 0 < low <= high"));
        }
        if !(self.cell_size_m > 0.0) || !self.cell_size_m.is_finite() {
            return Err(Error::invalid("cell_size_m", "must be positive"));
        }
        if !(self.truth_band_m[0] < self.truth_band_m[1]) {
            return Err(Error::invalid("truth_band_m", "need low < high"));
        }
        let cam = &self.camera;
        if !(cam.altitude_m > 0.0 && cam.ground_sample_m > 0.0) || cam.image_px.contains(&0) {
            return Err(Error::invalid(
                "camera",
                "altitude, ground sample and image size must be positive",
            ));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            if !(p.height_m[0] <= p.height_m[1]) {
                return Err(Error::invalid("primitive.height_m", "need low <= high"));
            }
            if !(0.0..=1.0).contains(&p.fill) {
                return Err(Error::invalid("primitive.fill", "must lie in [0, 1]"));
            }
        }
        if let Some(v) = &self.plant_variability {
            v.validate()?;
        }
        for c in &self.candidates {
            c.validate()?;
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let cam = &self.camera;
        let f = cam.altitude_m / cam.ground_sample_m;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: cam.image_px[0] as f64 / 2.0,
            cy: cam.image_px[1] as f64 / 2.0,
            width: cam.image_px[0],
            height: cam.image_px[1],
            distortion: Vec::new(),
        }
    }

    /// Camera-to-world transform of every tile, row by row.
    pub fn camera_poses(&self) -> Vec<RigidTransform> {
        let cam = &self.camera;
        let fw = cam.image_px[0] as f64 * cam.ground_sample_m;
        let fh = cam.image_px[1] as f64 * cam.ground_sample_m;
        let nx = (self.extent_m[0] / fw - 1e-9).ceil().max(1.0) as usize;
        let ny = (self.extent_m[1] / fh - 1e-9).ceil().max(1.0) as usize;
        // camera z looks down, camera y points to world -y
        let down = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let mut poses = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = Vector3::new(
                    (i as f64 + 0.5) * fw,
                    (j as f64 + 0.5) * fh,
                    self.ground.height_m + cam.altitude_m,
                );
                poses.push(RigidTransform::new(down, c).expect("diagonal rotation"));
            }
        }
        poses
    }
}

/// Sensor data of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    /// LiDAR-to-world.
    pub pose: Pose,
    /// LiDAR frame.
    pub cloud: Vec<LidarPoint>,
    pub cube: SpectralCube,
    /// Index of each cloud point in [`Scene::points`].
    pub point_index: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// World frame, in frame then pixel order.
    pub points: Vec<LabeledPoint>,
    pub plants_mask: Vec<bool>,
    pub truth: MassDensityGrid,
    pub frames: Vec<SceneFrame>,
    pub intrinsics: CameraIntrinsics,
    pub lidar_to_camera: RigidTransform,
}

/// Ground truth: per cell, the largest class density among primitives whose
/// footprint covers the cell and whose height range reaches into the truth
/// band. Cells with bare ground only are free (0).
pub fn truth_grid(spec: &SceneSpec) -> Result<MassDensityGrid> {
    spec.validate()?;
    let s = spec.cell_size_m;
    let w = (spec.extent_m[0] / s - 1e-9).ceil().max(1.0) as usize;
    let h = (spec.extent_m[1] / s - 1e-9).ceil().max(1.0) as usize;
    let [band_lo, band_hi] = spec.truth_band_m;
    let relevant: Vec<&Primitive> = spec
        .primitives
        .iter()
        .filter(|p| p.fill > 0.0 && p.height_m[1] > band_lo && p.height_m[0] <= band_hi)
        .collect();
    let mut values = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let (x0, y0) = (c as f64 * s, r as f64 * s);
            values[r * w + c] = relevant
                .iter()
                .filter(|p| p.shape.overlaps_cell(x0, y0, s))
                .map(|p| class_density(p.label))
                .fold(0.0, f64::max);
        }
    }
    MassDensityGrid::from_parts(
        s,
        (0, 0),
        w,
        h,
        values,
        vec![CellState::Observed; w * h],
        crate::traversal::RobotSpec::default().mass_kg,
    )
}

struct Sampler {
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    illumination: [f64; 2],
}

impl Sampler {
    fn spectrum(&mut self, profile: &[f64], grid: &BandGrid) -> ReflectanceSpectrum {
        let [lo, hi] = self.illumination;
        let scale = if lo == hi {
            lo
        } else {
            self.rng.random_range(lo..=hi)
        };
        let values = profile
            .iter()
            .map(|&v| {
                let n = self.noise.map_or(0.0, |d| d.sample(&mut self.rng));
                // stored as f32 in cubes; quantize so the round trip is exact
                (v * scale + n).clamp(0.0, REFLECTANCE_CEILING) as f32 as f64
            })
            .collect();
        ReflectanceSpectrum::new(grid.clone(), values).expect("clamped into range")
    }
}

/// Generates the scene. Bit-identical for equal specs.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let truth = truth_grid(spec)?;
    let grid = &spec.band_grid;
    let ground_profile = class_profile(spec.ground.label, grid)
        .spectrum
        .into_values();
    // traits come from their own stream so toggling variability leaves the
    // pixel noise sequence alone
    let mut trait_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let primitive_profiles: Vec<Vec<f64>> = spec
        .primitives
        .iter()
        .map(|p| {
            let traits = match &spec.plant_variability {
                Some(v) if p.label.is_plants() => v.draw(&mut trait_rng),
                _ => PlantTraits::NOMINAL,
            };
            grid.as_slice()
                .iter()
                .map(|&l| plant_reflectance(p.label, l, traits))
                .collect()
        })
        .collect();
    let mut sampler = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        noise: (spec.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma")),
        illumination: spec.illumination,
    };

    let intr = spec.intrinsics();
    let extr = &spec.camera.lidar_to_camera;
    let bands = grid.len();
    let mut points = Vec::new();
    let mut frames = Vec::new();
    for (fi, cam_to_world) in spec.camera_poses().into_iter().enumerate() {
        let lidar_to_world = cam_to_world.compose(extr);
        let world_to_lidar = lidar_to_world.inverse();
        let origin = *cam_to_world.translation();
        let mut data = Vec::with_capacity(intr.width as usize * intr.height as usize * bands);
        let mut cloud = Vec::new();
        let mut point_index = Vec::new();
        for row in 0..intr.height {
            for col in 0..intr.width {
                let ray_cam = Vector3::new(
                    (col as f64 + 0.5 - intr.cx) / intr.fx,
                    (row as f64 + 0.5 - intr.cy) / intr.fy,
                    1.0,
                );
                let d = cam_to_world.rotation() * ray_cam;
                match cast_ray(spec, &origin, &d, &mut sampler.rng) {
                    Some((p, source)) => {
                        let (label, profile) = match source {
                            Some(i) => (spec.primitives[i].label, &primitive_profiles[i]),
                            None => (spec.ground.label, &ground_profile),
                        };
                        let r = sampler.spectrum(profile, grid);
                        data.extend_from_slice(r.values());
                        let local = world_to_lidar.apply(&p);
                        point_index.push(points.len());
                        cloud.push(LidarPoint {
                            position: local,
                            intensity: None,
                        });
                        points.push(LabeledPoint {
                            position: p,
                            label,
                            reflectance: r,
                        });
                    }
                    // beyond the scene: the camera still sees something
                    None => data.extend_from_slice(&ground_profile),
                }
            }
        }
        let cube = SpectralCube::new(intr.width, intr.height, grid.clone(), data)?;
        frames.push(SceneFrame {
            pose: Pose {
                sensor_to_world: lidar_to_world,
                timestamp: fi as f64 * 0.1,
            },
            cloud,
            cube,
            point_index,
        });
    }
    let plants_mask = points.iter().map(|p| p.label.is_plants()).collect();
    Ok(Scene {
        points,
        plants_mask,
        truth,
        frames,
        intrinsics: intr,
        lidar_to_camera: extr.clone(),
    })
}

/// Return point of one ray and the index of the primitive it came from
/// (`None` for the ground), or `None` when the ground hit lies outside the
/// scene.
fn cast_ray(
    spec: &SceneSpec,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<(Vector3<f64>, Option<usize>)> {
    let g = &spec.ground;
    let denom = d.z - g.slope[0] * d.x - g.slope[1] * d.y;
    let t_ground = (g.height_at(o.x, o.y) - o.z) / denom;
    let hit = o + d * t_ground;
    if !(t_ground > 0.0)
        || hit.x < 0.0
        || hit.y < 0.0
        || hit.x >= spec.extent_m[0]
        || hit.y >= spec.extent_m[1]
    {
        return None;
    }
    let base = g.height_at(hit.x, hit.y);

    let mut crossings: Vec<(f64, f64, usize)> = spec
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, p)| p.fill > 0.0)
        .filter_map(|(i, p)| {
            let (a, b) = p.shape.footprint_interval(o, d)?;
            let top = p.shape.top(hit.x, hit.y, p.height_m[0], p.height_m[1]);
            // d.z < 0: higher z means smaller t
            let t_top = (base + top - o.z) / d.z;
            let t_bottom = (base + p.height_m[0] - o.z) / d.z;
            let lo = a.max(t_top).max(0.0);
            let hi = b.min(t_bottom).min(t_ground);
            (lo < hi).then_some((lo, hi, i))
        })
        .collect();
    crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (lo, hi, i) in crossings {
        let fill = spec.primitives[i].fill;
        if fill >= 1.0 || rng.random::<f64>() < fill {
            let t = rng.random_range(lo..hi);
            return Some((o + d * t, Some(i)));
        }
    }
    Some((hit, None))
}

/// Undulating surface, sampled at 70% fill.
pub fn heightfield(min: [f64; 2], max: [f64; 2], label: Label, height_m: [f64; 2]) -> Primitive {
    Primitive {
        shape: Shape::Heightfield {
            min,
            max,
            wavelength: 1.3,
        },
        label,
        height_m,
        fill: 0.7,
    }
}

/// Mown grass: too low to survive ground filtering.
pub fn lawn(min: [f64; 2], max: [f64; 2]) -> Primitive {
    heightfield(min, max, Label::Grass, [0.0, 0.04])
}

/// Axis-aligned box primitive.
pub fn bx(min: [f64; 2], max: [f64; 2], label: Label, height_m: [f64; 2], fill: f64) -> Primitive {
    Primitive {
        shape: Shape::Box { min, max },
        label,
        height_m,
        fill,
    }
}

/// Vertical cylinder primitive.
pub fn disk(
    center: [f64; 2],
    radius: f64,
    label: Label,
    height_m: [f64; 2],
    fill: f64,
) -> Primitive {
    Primitive {
        shape: Shape::Disk { center, radius },
        label,
        height_m,
        fill,
    }
}

/// Park with lawn, a gravel track, a building, bushes, trees, benches,
/// green-painted obstacles and pedestrians, under uneven illumination.
pub fn park_scene(seed: u64, noise_sigma: f64) -> SceneSpec {
    let extent = [20.0, 20.0];
    let mut spec = SceneSpec::new(seed, extent);
    spec.noise_sigma = noise_sigma;
    spec.illumination = [0.45, 1.15];
    spec.ground.label = Label::Track;
    spec.plant_variability = Some(PlantVariability {
        pigment: [0.5, 3.0],
        nir: [0.8, 1.2],
        edge_shift_nm: [-10.0, 10.0],
    });
    // lawn in 4 m patches so each patch draws its own traits
    let mut prims = Vec::new();
    for (y0, y1) in [
        (0.0, 4.0),
        (4.0, 8.0),
        (10.0, 14.0),
        (14.0, 18.0),
        (18.0, 20.0),
    ] {
        for x0 in (0..5).map(|i| 4.0 * i as f64) {
            prims.push(lawn([x0, y0], [x0 + 4.0, y1]));
        }
    }
    prims.extend([
        // mulch beds
        heightfield([1.0, 10.0], [5.0, 14.0], Label::Other, [0.0, 0.08]),
        heightfield([16.5, 0.5], [19.5, 6.5], Label::Other, [0.0, 0.08]),
        bx([13.0, 13.0], [19.0, 19.0], Label::Building, [0.0, 4.0], 0.6),
        bx([2.0, 2.0], [5.0, 3.0], Label::Vegetation, [0.0, 1.2], 0.8),
        bx([15.0, 2.0], [16.0, 6.0], Label::Vegetation, [0.0, 1.0], 0.8),
        bx([6.0, 12.0], [8.0, 12.6], Label::Other, [0.0, 0.8], 0.9),
        bx([10.0, 4.0], [11.5, 5.5], Label::Obstacle, [0.0, 1.0], 0.9),
        bx([3.0, 15.0], [4.0, 18.0], Label::Obstacle, [0.0, 0.8], 0.9),
        bx(
            [11.0, 11.0],
            [11.6, 11.6],
            Label::Pedestrian,
            [0.0, 1.8],
            0.9,
        ),
        bx([9.0, 8.5], [9.6, 9.1], Label::Pedestrian, [0.0, 1.7], 0.9),
    ]);
    for (c, r) in [
        ([3.0, 7.0], 1.5),
        ([7.0, 4.0], 1.2),
        ([10.0, 16.0], 2.0),
        ([17.0, 10.5], 1.0),
    ] {
        prims.push(disk(c, r, Label::Vegetation, [0.3, 4.0], 0.5));
    }
    spec.primitives = prims;
    spec
}

/// Paths through a tree grove, over mown grass, and off the mapped area.
pub fn golden_park_scene(seed: u64) -> SceneSpec {
    let extent = [16.0, 10.0];
    let mut spec = SceneSpec::new(seed, extent);
    spec.noise_sigma = 0.02;
    spec.camera.image_px = [160, 200];
    let mut prims = vec![lawn([0.0, 0.0], extent)];
    for x in [5.0, 6.4, 7.8, 9.2] {
        prims.push(disk([x, 2.25], 0.8, Label::Vegetation, [0.3, 3.5], 0.6));
    }
    prims.push(bx(
        [12.0, 7.5],
        [14.0, 9.5],
        Label::Building,
        [0.0, 3.0],
        0.8,
    ));
    spec.primitives = prims;
    let width = 0.4;
    spec.candidates = vec![
        PathCandidate::new("trees", vec![[1.0, 2.25], [13.0, 2.25]], width).unwrap(),
        PathCandidate::new("grass", vec![[1.0, 5.25], [13.0, 5.25]], width).unwrap(),
        PathCandidate::new("unknown", vec![[9.0, 6.75], [16.9, 6.75]], width).unwrap(),
    ];
    spec
}

/// Tilted bare ground with a few boxes on it.
pub fn planar_scene(seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::new(seed, [10.0, 10.0]);
    spec.ground = Ground {
        label: Label::Track,
        height_m: 0.3,
        slope: [0.03, -0.02],
    };
    spec.noise_sigma = 0.01;
    spec.primitives = vec![
        bx([2.0, 2.0], [3.0, 3.0], Label::Vegetation, [0.0, 1.0], 0.5),
        bx([6.0, 6.0], [8.0, 7.0], Label::Building, [0.0, 2.0], 0.8),
    ];
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{vegetation_index, BandSelection, IndexKind};

    fn small(seed: u64) -> SceneSpec {
        let mut s = SceneSpec::new(seed, [4.0, 4.0]);
        s.camera.image_px = [40, 40];
        s.camera.ground_sample_m = 0.1;
        s.primitives = vec![bx(
            [1.0, 1.0],
            [2.0, 2.0],
            Label::Vegetation,
            [0.0, 1.0],
            0.5,
        )];
        s
    }

    #[test]
    fn profiles_have_expected_shape() {
        let profiles = reference_profiles();
        assert_eq!(profiles.len(), Label::ALL.len());
        let bands = BandSelection::default();
        for p in &profiles {
            let label: Label = p.class_name.parse().unwrap();
            let v = p.spectrum.values();
            let ndvi = vegetation_index(IndexKind::Ndvi, &p.spectrum, &bands)
                .unwrap()
                .value;
            let (r650, r810) = (v[10], v[26]);
            if label.is_plants() {
                assert!(r810 >= 3.0 * r650, "{label}");
                assert!(ndvi >= 0.5, "{label}");
            }
            if matches!(label, Label::Building | Label::Track) {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                assert!(v.iter().all(|x| (x - mean).abs() <= 0.1 * mean), "{label}");
                assert!(ndvi.abs() <= 0.1, "{label}");
            }
        }
    }

    #[test]
    fn noiseless_points_match_profiles() {
        let scene = generate_scene(&small(1)).unwrap();
        let grid = BandGrid::vnir();
        for p in &scene.points {
            let want: Vec<f64> = class_profile(p.label, &grid)
                .spectrum
                .values()
                .iter()
                .map(|v| *v as f32 as f64)
                .collect();
            assert_eq!(p.reflectance.values(), &want[..]);
        }
        assert!(scene.points.iter().any(|p| p.label == Label::Vegetation));
        assert!(scene.points.iter().any(|p| p.label == Label::Grass));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut s = small(9);
        s.noise_sigma = 0.05;
        assert_eq!(generate_scene(&s).unwrap(), generate_scene(&s).unwrap());
        let mut t = s.clone();
        t.seed = 10;
        assert_ne!(
            generate_scene(&s).unwrap().points,
            generate_scene(&t).unwrap().points
        );
    }

    #[test]
    fn bush_covers_four_cells() {
        let g = truth_grid(&small(0)).unwrap();
        let hot: Vec<_> = g.cells().filter(|c| c.1 > 0.0).collect();
        assert_eq!(hot.len(), 4);
        assert!(hot.iter().all(|c| c.1 == 20.0));
        assert_eq!(
            hot.iter().map(|c| c.0).collect::<Vec<_>>(),
            vec![(2, 2), (3, 2), (2, 3), (3, 3)]
        );
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(generate_scene(&SceneSpec::new(0, [0.0, 3.0])).is_err());
    }

    #[test]
    fn points_lie_inside_their_primitive() {
        let scene = generate_scene(&small(4)).unwrap();
        for p in scene.points.iter().filter(|p| p.label == Label::Vegetation) {
            let q = p.position;
            assert!((1.0..2.0).contains(&q.x) && (1.0..2.0).contains(&q.y));
            assert!((0.0..=1.0 + 1e-9).contains(&q.z));
        }
        for p in scene.points.iter().filter(|p| p.label == Label::Grass) {
            assert!(p.position.z.abs() < 1e-9);
        }
    }

    #[test]
    fn lidar_points_map_back_to_world() {
        let scene = generate_scene(&small(2)).unwrap();
        for f in &scene.frames {
            for (lp, &i) in f.cloud.iter().zip(&f.point_index) {
                let w = f.pose.sensor_to_world.apply(&lp.position);
                assert!((w - scene.points[i].position).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = golden_park_scene(3);
        let text = toml::to_string(&s).unwrap();
        let back: SceneSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
        let minimal: SceneSpec = toml::from_str("seed = 1\nextent_m = [2.0, 3.0]\n").unwrap();
        assert_eq!(minimal.band_grid.len(), 29);
        assert_eq!(minimal.illumination, [1.0, 1.0]);
    }
}
