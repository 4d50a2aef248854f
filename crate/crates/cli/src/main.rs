use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use masstrav::config::PipelineConfig;
use masstrav::pipeline;
use masstrav::scenario::{golden_park_scene, park_scene, planar_scene, SceneSpec};
use masstrav::semantics::format_report_table;
use masstrav::{io, Error};

/// Mass-density traversability pipeline.
#[derive(Debug, Parser)]
#[command(name = "masstrav", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings applied on top of the configuration file.
#[derive(Debug, Args)]
struct Overrides {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for RANSAC and scene generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Robot mass (kg).
    #[arg(long, global = true)]
    mass: Option<f64>,
    /// Robot width (m).
    #[arg(long, global = true)]
    width: Option<f64>,
    /// Robot height (m); voxels higher above ground are ignored.
    #[arg(long, global = true)]
    height: Option<f64>,
    /// Grid cell size (m).
    #[arg(long, global = true)]
    cell_size: Option<f64>,
    /// Voxel size (m).
    #[arg(long, global = true)]
    voxel_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Park,
    Golden,
    Planar,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene and its sensor data.
    Gen {
        /// Scene description (TOML).
        #[arg(required_unless_present = "preset", conflicts_with = "preset")]
        scene: Option<PathBuf>,
        /// Built-in scene instead of a file.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Per-band noise for the `park` preset.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Attach reflectance to a LiDAR cloud and estimate mass densities.
    Fuse {
        /// LiDAR cloud (binary, or `.csv`)
        #[arg(long)]
        cloud: PathBuf,
        /// Spectral cube (binary, or `.csv`)
        #[arg(long)]
        cube: PathBuf,
        /// Camera intrinsics and LiDAR-to-camera extrinsics (TOML).
        #[arg(long)]
        camera: PathBuf,
        /// Spectral calibration matrix (CSV); without it the cube holds reflectance.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Augmented cloud (CSV).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Benchmark vegetation indices and spectral distances on a labeled map.
    Bench {
        /// Labeled map (CSV)
        labeled: PathBuf,
        /// Histogram bins for the Otsu threshold
        #[arg(long)]
        otsu_bins: Option<usize>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build a mass-density grid from augmented clouds.
    Map {
        /// Augmented clouds (CSV), in pose order.
        inputs: Vec<PathBuf>,
        /// One TUM pose per cloud (sensor to world); without it clouds are world frame.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Output stem: writes `.csv`, `.json` and `.pgm`.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score candidate paths on a grid and select the best.
    Evaluate {
        /// Grid CSV, with its JSON sidecar next to it.
        #[arg(long)]
        grid: PathBuf,
        /// Candidate paths (JSON).
        #[arg(long)]
        candidates: PathBuf,
        /// Output stem: writes `.csv`, `.json` and `.pgm`.
        #[arg(short, long)]
        out: PathBuf,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Fuse { .. } => "fuse",
            Command::Bench { .. } => "bench",
            Command::Map { .. } => "map",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn load_config(o: &Overrides) -> Result<PipelineConfig, Error> {
    let mut cfg = match &o.config {
        Some(p) => io::read_toml::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.ransac.seed = s;
    }
    if let Some(v) = o.mass {
        cfg.robot.mass_kg = v;
    }
    if let Some(v) = o.width {
        cfg.robot.width_m = v;
    }
    if let Some(v) = o.height {
        cfg.robot.height_m = v;
    }
    if let Some(v) = o.cell_size {
        cfg.grid.cell_size_m = v;
    }
    if let Some(v) = o.voxel_size {
        cfg.grid.voxel_size_m = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_spec(
    scene: Option<&Path>,
    preset: Option<Preset>,
    noise: f64,
    seed: Option<u64>,
) -> Result<SceneSpec, Error> {
    let mut spec = match (scene, preset) {
        (Some(p), _) => io::read_toml::<SceneSpec>(p)?,
        (None, Some(Preset::Park)) => park_scene(7, noise),
        (None, Some(Preset::Golden)) => golden_park_scene(3),
        (None, Some(Preset::Planar)) => planar_scene(11),
        (None, None) => {
            return Err(Error::Invalid {
                field: "scene".into(),
                reason: "give a scene file or --preset".into(),
            })
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// Set to a stage name to make that stage report an internal invariant
/// violation; exercises the exit-code path in tests.
const FAULT_ENV: &str = "MASSTRAV_INJECT_FAULT";

fn run(cli: Cli) -> Result<(), Error> {
    if std::env::var(FAULT_ENV).is_ok_and(|s| s == cli.command.stage()) {
        return Err(Error::Invariant(format!(
            "fault injected through {FAULT_ENV}"
        )));
    }
    let cfg = load_config(&cli.overrides)?;
    match cli.command {
        Command::Gen {
            scene,
            preset,
            noise,
            out,
        } => {
            let spec = scene_spec(scene.as_deref(), preset, noise, cli.overrides.seed)?;
            let (_, s) = pipeline::run_gen(&spec, &out)?;
            println!(
                "generated {} points ({} plants) in {} frames; {} files in {}",
                s.points,
                s.plants_points,
                s.frames,
                s.files.len(),
                out.display()
            );
        }
        Command::Fuse {
            cloud,
            cube,
            camera,
            calibration,
            out,
        } => {
            let s = pipeline::run_fuse(&cloud, &cube, &camera, calibration.as_deref(), &cfg, &out)?;
            println!(
                "fused {} points: {} with reflectance, {} outside the image, {} values clamped",
                s.points, s.with_reflectance, s.outside_image, s.clamped_values
            );
        }
        Command::Bench {
            labeled,
            otsu_bins,
            csv,
        } => {
            let mut cfg = cfg;
            if let Some(b) = otsu_bins {
                cfg.otsu_bins = b;
                cfg.validate()?;
            }
            let reports = pipeline::run_bench(&labeled, &cfg)?;
            print!("{}", format_report_table(&reports));
            if let Some(p) = csv {
                io::write_text(&p, &io::report_csv(&reports))?;
            }
        }
        Command::Map { inputs, poses, out } => {
            let s = pipeline::run_map(&inputs, poses.as_deref(), &cfg, &out)?;
            println!(
                "mapped {} points into {} voxels; grid {}x{} with {} observed cells",
                s.points_inserted, s.voxels, s.width, s.height, s.observed_cells
            );
        }
        Command::Evaluate {
            grid,
            candidates,
            out,
        } => {
            let eval = pipeline::run_evaluate(&grid, &candidates, &cfg, &out)?;
            for c in &eval.costs {
                let mark = if c.id == eval.selected { "*" } else { " " };
                println!(
                    "{mark} {:<16} alpha {:.6}  mass {:>10.3} kg  length {:.2} m",
                    c.id, c.cost.alpha, c.cost.integrated_mass, c.length_m
                );
            }
            println!("selected {}", eval.selected);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stage = cli.command.stage();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("masstrav {stage}: {e}");
            ExitCode::from(if e.is_invariant_violation() { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
