use masstrav::config::PipelineConfig;
use masstrav::fusion::{AugmentedPoint, Frame};
use masstrav::io;
use masstrav::mapping::{flatten_to_grid, CellState, GroundPlane, MassDensityGrid, Pose, VoxelMap};
use masstrav::pipeline::{self, layout};
use masstrav::scenario::{bx, class_density, generate_scene, golden_park_scene, SceneSpec};
use masstrav::semantics::Label;

fn bush_scene() -> SceneSpec {
    let mut s = SceneSpec::new(5, [4.0, 4.0]);
    s.camera.image_px = [80, 80];
    s.noise_sigma = 0.0;
    s.primitives = vec![bx(
        [1.0, 1.0],
        [2.0, 2.0],
        Label::Vegetation,
        [0.0, 0.8],
        1.0,
    )];
    s
}

/// Flattens the generated points with their class densities, so the result
/// is comparable with the generator's own truth grid.
fn flatten_with_class_densities(
    spec: &SceneSpec,
    cfg: &PipelineConfig,
) -> (MassDensityGrid, MassDensityGrid) {
    let scene = generate_scene(spec).unwrap();
    let pts: Vec<AugmentedPoint> = scene
        .points
        .iter()
        .map(|p| {
            let mut a = AugmentedPoint::bare(p.position, Frame::World);
            a.mass_density = Some(class_density(p.label));
            a
        })
        .collect();
    let mut map = VoxelMap::new(cfg.grid.voxel_size_m).unwrap();
    map.insert_cloud(&pts, &Pose::identity());
    let (n, d) = spec.ground.plane();
    let ground = GroundPlane {
        normal: n,
        offset: d,
        inlier_threshold: cfg.ransac.threshold_m,
    };
    let mut params = cfg.flatten_params();
    params.ugv_height = spec.truth_band_m[1];
    (
        flatten_to_grid(&map, &ground, &params).unwrap(),
        scene.truth,
    )
}

fn neighbourhood_has(grid: &MassDensityGrid, (i, j): (i64, i64), v: f64) -> bool {
    (-1..=1).any(|di| {
        (-1..=1).any(|dj| grid.contains((i + di, j + dj)) && grid.density((i + di, j + dj)) == v)
    })
}

#[test]
fn flattened_map_agrees_with_truth_up_to_boundary_cells() {
    let spec = golden_park_scene(8);
    let (mapped, truth) = flatten_with_class_densities(&spec, &PipelineConfig::default());
    let mut exact = 0;
    let mut total = 0;
    for (cell, v, state) in mapped.cells() {
        if state == CellState::Unknown || !truth.contains(cell) {
            continue;
        }
        total += 1;
        let t = truth.density(cell);
        if v == t {
            exact += 1;
            continue;
        }
        assert!(
            neighbourhood_has(&truth, cell, v),
            "cell {cell:?}: mapped {v}, truth {t}"
        );
    }
    for (cell, t, _) in truth.cells() {
        // no occupied truth cell goes missing
        if t > 0.0 && mapped.state(cell) == CellState::Observed {
            assert!(
                neighbourhood_has(&mapped, cell, t),
                "cell {cell:?}: truth {t} not mapped nearby"
            );
        }
    }
    assert!(
        exact as f64 >= 0.9 * total as f64,
        "{exact} of {total} exact"
    );
}

#[test]
fn single_bush_maps_to_its_truth() {
    let spec = bush_scene();
    let (mapped, truth) = flatten_with_class_densities(&spec, &PipelineConfig::default());
    let plants: Vec<_> = truth
        .cells()
        .filter(|(_, v, _)| *v > 0.0)
        .map(|(c, _, _)| c)
        .collect();
    assert_eq!(plants.len(), 4);
    for (cell, v, _) in truth.cells() {
        assert_eq!(mapped.density(cell), v, "cell {cell:?}");
    }
}

#[test]
fn fused_spectra_match_generator_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = bush_scene();
    spec.noise_sigma = 0.02;
    let (scene, summary) = pipeline::run_gen(&spec, dir.path()).unwrap();
    assert!(summary.frames >= 1);
    let cfg = PipelineConfig::default();
    for (i, frame) in scene.frames.iter().enumerate() {
        let out = dir.path().join(format!("aug_{i}.csv"));
        let s = pipeline::run_fuse(
            &dir.path().join(layout::cloud(i)),
            &dir.path().join(layout::cube(i)),
            &dir.path().join(layout::CAMERA),
            None,
            &cfg,
            &out,
        )
        .unwrap();
        assert_eq!(s.points, frame.cloud.len());
        assert_eq!(s.outside_image, 0);
        let fused = io::read_augmented(&out, Frame::Sensor).unwrap();
        assert_eq!(fused.len(), frame.cloud.len());
        for (p, &k) in fused.iter().zip(&frame.point_index) {
            let r = p.reflectance.as_ref().unwrap();
            assert_eq!(r.values(), scene.points[k].reflectance.values());
            assert!(p.plants_probability.is_some() && p.mass_density.is_some());
        }
    }
}

#[test]
fn map_stage_reproduces_grid_bytes_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bush_scene();
    let (scene, _) = pipeline::run_gen(&spec, dir.path()).unwrap();
    let cfg = PipelineConfig::default();
    let mut inputs = Vec::new();
    for i in 0..scene.frames.len() {
        let out = dir.path().join(format!("aug_{i}.csv"));
        pipeline::run_fuse(
            &dir.path().join(layout::cloud(i)),
            &dir.path().join(layout::cube(i)),
            &dir.path().join(layout::CAMERA),
            None,
            &cfg,
            &out,
        )
        .unwrap();
        inputs.push(out);
    }
    let poses = dir.path().join(layout::POSES);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    pipeline::run_map(&inputs, Some(&poses), &cfg, &a).unwrap();
    pipeline::run_map(&inputs, Some(&poses), &cfg, &b).unwrap();
    for ext in ["csv", "json", "pgm"] {
        assert_eq!(
            std::fs::read(a.with_extension(ext)).unwrap(),
            std::fs::read(b.with_extension(ext)).unwrap()
        );
    }
    // the bush shows up as plants-density cells in the mapped grid
    let grid = io::read_grid(&a.with_extension("csv")).unwrap();
    let bush = grid.density(grid.cell_of(1.5, 1.5));
    assert!(bush > 0.0 && bush < 2400.0, "{bush}");

    let empty = dir.path().join("empty");
    let s = pipeline::run_map(&[], None, &cfg, &empty).unwrap();
    assert_eq!((s.width, s.height, s.observed_cells), (1, 1, 0));
}

#[test]
fn noiseless_scene_is_separable_by_ndvi() {
    let mut spec = golden_park_scene(2);
    spec.noise_sigma = 0.0;
    let scene = generate_scene(&spec).unwrap();
    let reports = pipeline::bench(&scene.points, &PipelineConfig::default()).unwrap();
    assert_eq!(reports.len(), 13);
    let ndvi = reports.iter().find(|r| r.index_name == "ndvi").unwrap();
    assert_eq!(ndvi.iou, 1.0);
}
