//! File-level pipeline stages: generate, fuse, map, evaluate, benchmark.
//!
//! Each stage reads its inputs from disk, writes its artifacts and returns a
//! summary. Outputs depend only on inputs, configuration and seed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fusion::{augment_cloud, AugmentStats, AugmentedPoint, Frame};
use crate::io;
use crate::mapping::{
    flatten_to_grid, ransac_ground_plane, GroundPlane, InsertStats, MassDensityGrid, Pose, VoxelMap,
};
use crate::scenario::{class_profile, generate_scene, Scene, SceneSpec};
use crate::semantics::{benchmark_indices, Label, LabeledPoint, SegmentationReport};
use crate::spectral::{DistanceKind, IndexKind};
use crate::traversal::{evaluate_candidates, rasterize_path, Evaluation, PathCandidate, RobotSpec};

/// Names of the files `run_gen` writes into its output directory.
pub mod layout {
    pub const SCENE: &str = "scene.toml";
    pub const LABELED: &str = "labeled.csv";
    pub const TRUTH_STEM: &str = "truth";
    pub const CAMERA: &str = "camera.toml";
    pub const POSES: &str = "poses.txt";
    pub const CANDIDATES: &str = "candidates.json";

    pub fn cloud(frame: usize) -> String {
        format!("cloud_{frame:03}.bin")
    }

    pub fn cube(frame: usize) -> String {
        format!("cube_{frame:03}.bin")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenSummary {
    pub points: usize,
    pub plants_points: usize,
    pub frames: usize,
    pub files: Vec<PathBuf>,
}

/// Generates a scene and writes the labeled map, ground-truth grid, camera
/// config, per-frame LiDAR clouds and cubes, their poses and, when the spec
/// has any, the candidate paths.
pub fn run_gen(spec: &SceneSpec, out_dir: &Path) -> Result<(Scene, GenSummary)> {
    let scene = generate_scene(spec)?;
    let mut files = Vec::new();
    let mut put = |name: &str| {
        let p = out_dir.join(name);
        files.push(p.clone());
        p
    };
    let truth_stem = out_dir.join(layout::TRUTH_STEM);
    let (a, b, c) = io::grid_paths(&truth_stem);
    put(a.file_name().and_then(|n| n.to_str()).unwrap_or_default());
    put(b.file_name().and_then(|n| n.to_str()).unwrap_or_default());
    put(c.file_name().and_then(|n| n.to_str()).unwrap_or_default());
    io::write_toml(&put(layout::SCENE), spec)?;
    io::write_labeled(&put(layout::LABELED), &scene.points)?;
    io::write_grid(&truth_stem, &scene.truth)?;
    io::write_camera_config(
        &put(layout::CAMERA),
        &io::CameraConfig {
            intrinsics: scene.intrinsics.clone(),
            extrinsics: scene.lidar_to_camera.clone(),
        },
    )?;
    let poses: Vec<Pose> = scene.frames.iter().map(|f| f.pose.clone()).collect();
    io::write_poses(&put(layout::POSES), &poses)?;
    for (i, f) in scene.frames.iter().enumerate() {
        io::write_cloud(&put(&layout::cloud(i)), &f.cloud)?;
        io::write_cube(&put(&layout::cube(i)), &f.cube)?;
    }
    if !spec.candidates.is_empty() {
        io::write_candidates(&put(layout::CANDIDATES), &spec.candidates)?;
    }
    let summary = GenSummary {
        points: scene.points.len(),
        plants_points: scene.plants_mask.iter().filter(|&&p| p).count(),
        frames: scene.frames.len(),
        files,
    };
    Ok((scene, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuseSummary {
    pub points: usize,
    pub with_reflectance: usize,
    pub outside_image: usize,
    pub clamped_values: usize,
    pub annotated: usize,
}

impl FuseSummary {
    fn new(stats: &AugmentStats, points: usize, annotated: usize) -> Self {
        FuseSummary {
            points,
            with_reflectance: stats.inside,
            outside_image: stats.outside,
            clamped_values: stats.clamped_values,
            annotated,
        }
    }
}

/// Augments one LiDAR cloud with reflectance from one cube and annotates it
/// with Plants probability and expected mass density.
pub fn fuse(
    cloud_path: &Path,
    cube_path: &Path,
    camera_path: &Path,
    calibration_path: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<(Vec<AugmentedPoint>, FuseSummary)> {
    let cloud = io::read_cloud(cloud_path)?;
    let cube = io::read_cube(cube_path)?;
    let camera = io::read_camera_config(camera_path)?;
    let calibration = calibration_path.map(io::read_calibration).transpose()?;
    let (mut points, stats) = augment_cloud(
        &cloud,
        &cube,
        &camera.intrinsics,
        &camera.extrinsics,
        calibration.as_ref(),
    )?;
    let annotated = cfg.semantic_model().annotate(&mut points)?;
    let summary = FuseSummary::new(&stats, points.len(), annotated);
    Ok((points, summary))
}

pub fn run_fuse(
    cloud_path: &Path,
    cube_path: &Path,
    camera_path: &Path,
    calibration_path: Option<&Path>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<FuseSummary> {
    let (points, summary) = fuse(cloud_path, cube_path, camera_path, calibration_path, cfg)?;
    io::write_augmented(out, &points)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapSummary {
    pub clouds: usize,
    pub points_inserted: usize,
    pub skipped_non_finite: usize,
    pub voxels: usize,
    /// `None` when the map is empty.
    pub ground_normal: Option<[f64; 3]>,
    pub ground_offset: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub observed_cells: usize,
}

/// Accumulates posed clouds into a voxel map, fits the ground plane on the
/// voxel centroids and flattens the map into a density grid.
pub fn build_grid(
    clouds: &[(Vec<AugmentedPoint>, Pose)],
    cfg: &PipelineConfig,
) -> Result<(MassDensityGrid, Option<GroundPlane>, MapSummary)> {
    cfg.validate()?;
    let mut map = VoxelMap::new(cfg.grid.voxel_size_m)?;
    let mut total = InsertStats::default();
    for (points, pose) in clouds {
        let s = map.insert_cloud(points, pose);
        total.inserted += s.inserted;
        total.skipped_non_finite += s.skipped_non_finite;
    }
    let ground = if map.is_empty() {
        None
    } else {
        Some(ransac_ground_plane(
            &map.centroids(),
            cfg.ransac.threshold_m,
            cfg.ransac.iterations,
            cfg.ransac.seed,
        )?)
    };
    let plane = ground
        .clone()
        .unwrap_or_else(|| GroundPlane::horizontal(0.0, cfg.ransac.threshold_m));
    let grid = flatten_to_grid(&map, &plane, &cfg.flatten_params())?;
    let summary = MapSummary {
        clouds: clouds.len(),
        points_inserted: total.inserted,
        skipped_non_finite: total.skipped_non_finite,
        voxels: map.len(),
        ground_normal: ground
            .as_ref()
            .map(|g| [g.normal.x, g.normal.y, g.normal.z]),
        ground_offset: ground.as_ref().map(|g| g.offset),
        width: grid.width(),
        height: grid.height(),
        observed_cells: grid
            .states()
            .iter()
            .filter(|s| **s == crate::mapping::CellState::Observed)
            .count(),
    };
    Ok((grid, ground, summary))
}

/// Maps augmented clouds (sensor frame) posed by the `i`-th line of the TUM
/// pose file. Without a pose file every cloud is taken as world frame.
pub fn run_map(
    inputs: &[PathBuf],
    poses_path: Option<&Path>,
    cfg: &PipelineConfig,
    out_stem: &Path,
) -> Result<MapSummary> {
    let poses = match poses_path {
        Some(p) => {
            let poses = io::read_poses(p)?;
            if poses.len() != inputs.len() {
                return Err(Error::format(
                    p,
                    format!("{} poses for {} clouds", poses.len(), inputs.len()),
                ));
            }
            poses
        }
        None => vec![Pose::identity(); inputs.len()],
    };
    let frame = if poses_path.is_some() {
        Frame::Sensor
    } else {
        Frame::World
    };
    let mut clouds = Vec::with_capacity(inputs.len());
    for (path, pose) in inputs.iter().zip(poses) {
        clouds.push((io::read_augmented(path, frame)?, pose));
    }
    let (grid, _, summary) = build_grid(&clouds, cfg)?;
    io::write_grid(out_stem, &grid)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport<'a> {
    pub robot: &'a RobotSpec,
    pub cell_size_m: f64,
    pub selected: &'a str,
    pub candidates: Vec<CandidateRow<'a>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRow<'a> {
    pub id: &'a str,
    pub alpha: f64,
    pub log_alpha: f64,
    pub kinetic_energy_loss: f64,
    pub integrated_mass_kg: f64,
    pub crossed_area_m2: f64,
    pub length_m: f64,
    pub cells: Vec<[f64; 3]>,
}

pub fn cost_report<'a>(
    eval: &'a Evaluation,
    robot: &'a RobotSpec,
    grid: &MassDensityGrid,
) -> CostReport<'a> {
    CostReport {
        robot,
        cell_size_m: grid.cell_size(),
        selected: &eval.selected,
        candidates: eval
            .costs
            .iter()
            .map(|c| CandidateRow {
                id: &c.id,
                alpha: c.cost.alpha,
                log_alpha: c.cost.log_alpha,
                kinetic_energy_loss: c.cost.kinetic_energy_loss(),
                integrated_mass_kg: c.cost.integrated_mass,
                crossed_area_m2: c.cost.crossed_area,
                length_m: c.length_m,
                cells: c
                    .cost
                    .cells
                    .iter()
                    .map(|k| [k.cell.0 as f64, k.cell.1 as f64, k.density])
                    .collect(),
            })
            .collect(),
    }
}

/// Scores candidates on a grid and writes `<stem>.csv` (costs),
/// `<stem>.json` (full report) and `<stem>.pgm` (grid with the paths drawn
/// at their α).
pub fn run_evaluate(
    grid_path: &Path,
    candidates_path: &Path,
    cfg: &PipelineConfig,
    out_stem: &Path,
) -> Result<Evaluation> {
    cfg.validate()?;
    let grid = io::read_grid(grid_path)?;
    let candidates = io::read_candidates(candidates_path)?;
    let eval = evaluate(&candidates, &grid, &cfg.robot)?;
    let (csv, json, pgm) = io::grid_paths(out_stem);
    io::write_text(&csv, &io::costs_csv(&eval))?;
    io::write_json(&json, &cost_report(&eval, &cfg.robot, &grid))?;
    io::write_pgm(&pgm, &overlay(&grid, &candidates, &eval)?)?;
    Ok(eval)
}

/// [`evaluate_candidates`] with a consistency check on the result.
pub fn evaluate(
    candidates: &[PathCandidate],
    grid: &MassDensityGrid,
    robot: &RobotSpec,
) -> Result<Evaluation> {
    let eval = evaluate_candidates(candidates, grid, robot)?;
    for c in &eval.costs {
        if !(c.cost.alpha > 0.0 && c.cost.alpha <= 1.0) || c.cost.log_alpha > 0.0 {
            return Err(Error::Invariant(format!(
                "path `{}` has alpha {} outside (0, 1]",
                c.id, c.cost.alpha
            )));
        }
    }
    if !eval.costs.iter().any(|c| c.id == eval.selected) {
        return Err(Error::Invariant(format!(
            "selected path `{}` was not scored",
            eval.selected
        )));
    }
    Ok(eval)
}

/// Preview image with every candidate drawn at its α.
pub fn overlay(
    grid: &MassDensityGrid,
    candidates: &[PathCandidate],
    eval: &Evaluation,
) -> Result<Vec<u8>> {
    let cells: Vec<Vec<(i64, i64)>> = candidates
        .iter()
        .map(|c| rasterize_path(c, grid))
        .collect::<Result<_>>()?;
    let overlays: Vec<io::Overlay<'_>> = candidates
        .iter()
        .zip(&cells)
        .zip(&eval.costs)
        .map(|((c, cells), cost)| io::Overlay {
            id: &c.id,
            alpha: cost.cost.alpha,
            cells,
        })
        .collect();
    Ok(io::grid_pgm(grid, &overlays))
}

/// Reference profiles for every class on the map's own band grid.
pub fn profiles_for(map: &[LabeledPoint]) -> Vec<crate::spectral::ReferenceProfile> {
    match map.first() {
        Some(p) => Label::ALL
            .iter()
            .map(|&l| class_profile(l, p.reflectance.grid()))
            .collect(),
        None => Vec::new(),
    }
}

/// All ten indices and three distances on a labeled map.
pub fn bench(map: &[LabeledPoint], cfg: &PipelineConfig) -> Result<Vec<SegmentationReport>> {
    benchmark_indices(
        map,
        &IndexKind::ALL,
        &DistanceKind::ALL,
        &profiles_for(map),
        &cfg.bands,
        cfg.otsu_bins,
    )
}

pub fn run_bench(labeled_path: &Path, cfg: &PipelineConfig) -> Result<Vec<SegmentationReport>> {
    let map = io::read_labeled(labeled_path)?;
    if map.is_empty() {
        return Err(Error::format(labeled_path, "labeled map has no points"));
    }
    bench(&map, cfg)
}
