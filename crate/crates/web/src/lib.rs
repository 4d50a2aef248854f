//! Browser demo. Each exported function takes plain numbers and returns a
//! JSON string; the page in `www/` draws the results.

use masstrav::config::PipelineConfig;
use masstrav::fusion::augment_cloud;
use masstrav::pipeline;
use masstrav::scenario::{generate_scene, golden_park_scene, park_scene};
use masstrav::semantics::ClassDensityTable;
use masstrav::traversal::{alpha_continuous, alpha_discrete, RobotSpec};
use masstrav::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub length_m: f64,
    pub discrete: f64,
    pub continuous: f64,
}

/// Retained velocity while driving `length` metres through uniform matter,
/// with the swept area split into particles of `particle_area_m2`.
pub fn collision_curve(
    robot_mass: f64,
    density: f64,
    width: f64,
    particle_area_m2: f64,
    max_length: f64,
    steps: usize,
) -> Result<Vec<CurvePoint>> {
    let steps = steps.clamp(1, 2000);
    (0..=steps)
        .map(|k| {
            let length = max_length * k as f64 / steps as f64;
            let area = length * width;
            let n = (area / particle_area_m2).round() as usize;
            let discrete = if n == 0 {
                1.0
            } else {
                alpha_discrete(robot_mass, &vec![density; n], area / n as f64)?
            };
            Ok(CurvePoint {
                length_m: length,
                discrete,
                continuous: alpha_continuous(robot_mass, density * area)?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct PathView {
    pub id: String,
    pub waypoints: Vec<[f64; 2]>,
    pub width: f64,
    pub alpha: f64,
    pub integrated_mass_kg: f64,
    pub cells: Vec<(i64, i64)>,
}

#[derive(Debug, Serialize)]
pub struct GridView {
    pub origin_cell: (i64, i64),
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub init_density: f64,
    pub paths: Vec<PathView>,
    pub selected: String,
}

/// Runs the golden park scene through fusion, mapping and path scoring with
/// the given robot mass and class densities.
pub fn golden_paths(robot_mass: f64, plants_density: f64, other_density: f64) -> Result<GridView> {
    let spec = golden_park_scene(3);
    let scene = generate_scene(&spec)?;
    let mut cfg = PipelineConfig::default();
    cfg.robot = RobotSpec {
        mass_kg: robot_mass,
        ..RobotSpec::default()
    };
    cfg.densities = ClassDensityTable::plants_vs_rest(plants_density, other_density)?;
    cfg.validate()?;
    let model = cfg.semantic_model();
    let mut clouds = Vec::new();
    for f in &scene.frames {
        let (mut pts, _) = augment_cloud(
            &f.cloud,
            &f.cube,
            &scene.intrinsics,
            &scene.lidar_to_camera,
            None,
        )?;
        model.annotate(&mut pts)?;
        clouds.push((pts, f.pose.clone()));
    }
    let (grid, _, _) = pipeline::build_grid(&clouds, &cfg)?;
    let eval = pipeline::evaluate(&spec.candidates, &grid, &cfg.robot)?;
    let paths = spec
        .candidates
        .iter()
        .zip(&eval.costs)
        .map(|(c, cost)| PathView {
            id: c.id.clone(),
            waypoints: c.waypoints.clone(),
            width: c.width,
            alpha: cost.cost.alpha,
            integrated_mass_kg: cost.cost.integrated_mass,
            cells: cost.cost.cells.iter().map(|k| k.cell).collect(),
        })
        .collect();
    Ok(GridView {
        origin_cell: grid.origin_cell(),
        cell_size: grid.cell_size(),
        width: grid.width(),
        height: grid.height(),
        values: grid.values().to_vec(),
        observed: grid
            .states()
            .iter()
            .map(|s| *s == masstrav::mapping::CellState::Observed)
            .collect(),
        init_density: grid.init_density(),
        paths,
        selected: eval.selected,
    })
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Segmentation benchmark on a reduced park scene at the given noise level.
pub fn segmentation_sweep(noise_sigma: f64, seed: u64) -> Result<Vec<BenchRow>> {
    let mut spec = park_scene(seed, noise_sigma);
    // a quarter of the pixels keeps the page responsive
    spec.camera.image_px = [100, 100];
    spec.camera.ground_sample_m *= 2.0;
    let scene = generate_scene(&spec)?;
    let reports = pipeline::bench(&scene.points, &PipelineConfig::default())?;
    let mut rows: Vec<BenchRow> = reports
        .into_iter()
        .map(|r| BenchRow {
            method: r.index_name,
            iou: r.iou,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        })
        .collect();
    rows.sort_by(|a, b| b.iou.total_cmp(&a.iou));
    Ok(rows)
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = collisionCurve)]
pub fn collision_curve_js(
    robot_mass: f64,
    density: f64,
    width: f64,
    particle_area_m2: f64,
    max_length: f64,
    steps: usize,
) -> std::result::Result<String, JsError> {
    to_js(collision_curve(
        robot_mass,
        density,
        width,
        particle_area_m2,
        max_length,
        steps,
    ))
}

#[wasm_bindgen(js_name = goldenPaths)]
pub fn golden_paths_js(
    robot_mass: f64,
    plants_density: f64,
    other_density: f64,
) -> std::result::Result<String, JsError> {
    to_js(golden_paths(robot_mass, plants_density, other_density))
}

#[wasm_bindgen(js_name = segmentationSweep)]
pub fn segmentation_sweep_js(noise_sigma: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(segmentation_sweep(noise_sigma, seed as u64))
}
