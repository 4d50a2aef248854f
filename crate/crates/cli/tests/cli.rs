use std::path::Path;
use std::process::{Command, Output};

use masstrav::scenario::{bx, SceneSpec};
use masstrav::semantics::Label;
use masstrav::traversal::PathCandidate;

fn masstrav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masstrav"))
        .args(args)
        .env_remove("MASSTRAV_INJECT_FAULT")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_scene(noise: f64) -> SceneSpec {
    let mut s = SceneSpec::new(9, [4.0, 4.0]);
    s.camera.image_px = [80, 80];
    s.noise_sigma = noise;
    s.primitives = vec![
        bx([0.5, 0.5], [1.5, 1.5], Label::Vegetation, [0.0, 0.8], 1.0),
        bx([2.5, 2.5], [3.5, 3.0], Label::Building, [0.0, 2.0], 1.0),
    ];
    s.candidates = vec![
        PathCandidate::new("clear", vec![[0.2, 3.6], [3.8, 3.6]], 0.4).unwrap(),
        PathCandidate::new("bush", vec![[0.2, 1.0], [3.8, 1.0]], 0.4).unwrap(),
    ];
    s
}

fn write_scene(dir: &Path, spec: &SceneSpec) -> std::path::PathBuf {
    let path = dir.join("scene.toml");
    std::fs::write(&path, toml::to_string(spec).unwrap()).unwrap();
    path
}

/// gen, fuse every frame, map, evaluate; returns the evaluate stdout.
fn full_run(dir: &Path, scene: &Path) -> String {
    let gen_dir = dir.join("gen");
    let o = masstrav(&["gen", p(scene), "--out", p(&gen_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut augmented = Vec::new();
    for i in 0.. {
        let cloud = gen_dir.join(format!("cloud_{i:03}.bin"));
        if !cloud.exists() {
            break;
        }
        let out = dir.join(format!("aug_{i:03}.csv"));
        let o = masstrav(&[
            "fuse",
            "--cloud",
            p(&cloud),
            "--cube",
            p(&gen_dir.join(format!("cube_{i:03}.bin"))),
            "--camera",
            p(&gen_dir.join("camera.toml")),
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        augmented.push(out);
    }
    assert!(!augmented.is_empty());
    let mut args = vec!["map".to_string()];
    args.extend(augmented.iter().map(|a| p(a).to_string()));
    args.extend([
        "--poses".into(),
        p(&gen_dir.join("poses.txt")).into(),
        "--out".into(),
        p(&dir.join("grid")).into(),
    ]);
    let o = masstrav(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = masstrav(&[
        "evaluate",
        "--grid",
        p(&dir.join("grid.csv")),
        "--candidates",
        p(&gen_dir.join("candidates.json")),
        "--out",
        p(&dir.join("costs")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o)
}

#[test]
fn full_chain_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), &small_scene(0.02));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out_a = full_run(&a, &scene);
    let out_b = full_run(&b, &scene);
    assert_eq!(out_a, out_b);
    assert!(out_a.contains("selected clear"), "{out_a}");
    for f in [
        "grid.csv",
        "grid.json",
        "grid.pgm",
        "costs.csv",
        "costs.json",
        "costs.pgm",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    for f in [
        "labeled.csv",
        "truth.csv",
        "cloud_000.bin",
        "cube_000.bin",
        "poses.txt",
    ] {
        assert_eq!(
            std::fs::read(a.join("gen").join(f)).unwrap(),
            std::fs::read(b.join("gen").join(f)).unwrap(),
            "{f}"
        );
    }
    let costs = std::fs::read_to_string(a.join("costs.csv")).unwrap();
    let clear = costs.lines().find(|l| l.starts_with("clear,")).unwrap();
    assert!(clear.starts_with("clear,1,0,"), "{clear}");
}

#[test]
fn fuse_keeps_one_row_per_point_and_names_missing_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), &small_scene(0.0));
    let gen_dir = tmp.path().join("gen");
    assert!(masstrav(&["gen", p(&scene), "--out", p(&gen_dir)])
        .status
        .success());
    let out = tmp.path().join("aug.csv");
    let o = masstrav(&[
        "fuse",
        "--cloud",
        p(&gen_dir.join("cloud_000.bin")),
        "--cube",
        p(&gen_dir.join("cube_000.bin")),
        "--camera",
        p(&gen_dir.join("camera.toml")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cloud = masstrav::io::read_cloud(&gen_dir.join("cloud_000.bin")).unwrap();
    let rows = std::fs::read_to_string(&out).unwrap().lines().count() - 1;
    assert_eq!(rows, cloud.len());

    let missing = tmp.path().join("nope.bin");
    let o = masstrav(&[
        "fuse",
        "--cloud",
        p(&missing),
        "--cube",
        p(&gen_dir.join("cube_000.bin")),
        "--camera",
        p(&gen_dir.join("camera.toml")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("fuse") && err.contains("nope.bin"), "{err}");
}

#[test]
fn bench_reports_all_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), &small_scene(0.0));
    let gen_dir = tmp.path().join("gen");
    assert!(masstrav(&["gen", p(&scene), "--out", p(&gen_dir)])
        .status
        .success());
    let csv = tmp.path().join("bench.csv");
    let o = masstrav(&["bench", p(&gen_dir.join("labeled.csv")), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let header = table.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(
        cols,
        ["Index", "IoU", "Prec.", "Rec.", "Acc.", "F1", "Spec.", "Δt", "[ms]"]
    );
    let report = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(report.lines().count(), 1 + 13);
    let ndvi = report.lines().find(|l| l.starts_with("ndvi,")).unwrap();
    assert!(ndvi.starts_with("ndvi,1,"), "{ndvi}");

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(masstrav(&["bench", p(&empty)]).status.code(), Some(1));
}

#[test]
fn map_without_inputs_emits_one_unknown_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let stem = tmp.path().join("empty");
    let o = masstrav(&["map", "--out", p(&stem)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(stem.with_extension("csv")).unwrap(),
        "250\n"
    );
    let sidecar = std::fs::read_to_string(stem.with_extension("json")).unwrap();
    assert!(sidecar.contains("\"observed\": [\n    0\n  ]"), "{sidecar}");
}

#[test]
fn malformed_candidates_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let stem = tmp.path().join("g");
    assert!(masstrav(&["map", "--out", p(&stem)]).status.success());
    let cands = tmp.path().join("c.json");
    std::fs::write(
        &cands,
        r#"{"candidates":[{"id":"a","waypoints":[[0,0],[1,0]],"width":-1}]}"#,
    )
    .unwrap();
    let o = masstrav(&[
        "evaluate",
        "--grid",
        p(&stem.with_extension("csv")),
        "--candidates",
        p(&cands),
        "--out",
        p(&tmp.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));
}

#[test]
fn bad_scene_and_bad_usage_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small_scene(0.0);
    spec.extent_m = [0.0, 4.0];
    let scene = write_scene(tmp.path(), &spec);
    let o = masstrav(&["gen", p(&scene), "--out", p(&tmp.path().join("g"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(masstrav(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        masstrav(&["--mass", "-5", "map", "--out", p(&tmp.path().join("m"))])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(masstrav(&["--help"]).status.code(), Some(0));
}

#[test]
fn invariant_violations_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_masstrav"))
        .args(["map", "--out", p(&tmp.path().join("g"))])
        .env("MASSTRAV_INJECT_FAULT", "map")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invariant"));
}
