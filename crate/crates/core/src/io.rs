//! File formats. Byte layouts of the binary forms are in `docs/formats.md`.
//!
//! Text formats write floats in shortest round-trip form, so writing and
//! reading back is lossless and output is byte-stable.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    AugmentedPoint, CameraIntrinsics, Frame, LidarPoint, RigidTransform, SpectralCube,
};
use crate::mapping::{CellState, MassDensityGrid, Pose};
use crate::semantics::{Label, LabeledPoint, SegmentationReport};
use crate::spectral::{BandGrid, ReflectanceSpectrum, SpectralCalibration};
use crate::traversal::{Evaluation, PathCandidate};

pub const CUBE_MAGIC: &[u8; 4] = b"MSCB";
pub const CLOUD_MAGIC: &[u8; 4] = b"LPCB";
pub const FORMAT_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("{what}: `{field}` is not a number"),
    })
}

fn parse_opt(path: &Path, line: u64, field: &str, what: &str) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(path, line, field, what).map(Some)
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn headers(path: &Path, r: &mut csv::Reader<BufReader<File>>) -> Result<Vec<String>> {
    let h = r.headers().map_err(|e| csv_err(path, e))?;
    if h.is_empty() || h.iter().all(str::is_empty) {
        return Err(Error::format(path, "missing header row"));
    }
    Ok(h.iter().map(str::to_string).collect())
}

fn expect_columns(path: &Path, headers: &[String], fixed: &[&str]) -> Result<BandGrid> {
    if headers.len() < fixed.len()
        || headers[..fixed.len()]
            .iter()
            .zip(fixed)
            .any(|(a, b)| a != b)
    {
        return Err(Error::format(
            path,
            format!("header must start with `{}`", fixed.join(",")),
        ));
    }
    let bands: Result<Vec<f64>> = headers[fixed.len()..]
        .iter()
        .map(|h| parse_f64(path, 1, h, "band wavelength"))
        .collect();
    if headers.len() == fixed.len() {
        return Err(Error::format(path, "no band columns"));
    }
    BandGrid::new(bands?)
}

fn band_header(fixed: &str, grid: &BandGrid) -> String {
    let mut s = fixed.to_string();
    for w in grid.as_slice() {
        let _ = write!(s, ",{w}");
    }
    s.push('\n');
    s
}

fn push_values(s: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(s, ",{v}");
    }
}

// ---- spectral cube ----

/// Reads a cube: `.csv` as `x,y,<wavelengths>` rows, anything else as the
/// binary layout.
pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    if is_csv(path) {
        read_cube_csv(path)
    } else {
        read_cube_bin(path)
    }
}

pub fn write_cube(path: &Path, cube: &SpectralCube) -> Result<()> {
    if is_csv(path) {
        write_cube_csv(path, cube)
    } else {
        write_cube_bin(path, cube)
    }
}

fn write_cube_bin(path: &Path, cube: &SpectralCube) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + cube.data().len() * 4);
    buf.extend_from_slice(CUBE_MAGIC);
    let io = |e| Error::io(path, e);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    buf.write_u32::<LittleEndian>(cube.width()).map_err(io)?;
    buf.write_u32::<LittleEndian>(cube.height()).map_err(io)?;
    buf.write_u32::<LittleEndian>(cube.grid().len() as u32)
        .map_err(io)?;
    for w in cube.grid().as_slice() {
        buf.write_f32::<LittleEndian>(*w as f32).map_err(io)?;
    }
    // band-sequential planes, row-major inside each plane
    let (w, h) = (cube.width(), cube.height());
    for b in 0..cube.grid().len() {
        for row in 0..h {
            for col in 0..w {
                buf.write_f32::<LittleEndian>(cube.pixel(col, row)[b] as f32)
                    .map_err(io)?;
            }
        }
    }
    write_all(path, &buf)
}

fn read_cube_bin(path: &Path) -> Result<SpectralCube> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated cube header"))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::format(path, "not a spectral cube (bad magic)"));
    }
    let short = |_| Error::format(path, "truncated cube");
    let version = r.read_u32::<LittleEndian>().map_err(short)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported cube version {version}"),
        ));
    }
    let width = r.read_u32::<LittleEndian>().map_err(short)?;
    let height = r.read_u32::<LittleEndian>().map_err(short)?;
    let bands = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::format(path, "cube dimensions must be positive"));
    }
    let mut wl = vec![0f32; bands];
    r.read_f32_into::<LittleEndian>(&mut wl).map_err(short)?;
    let grid = BandGrid::new(wl.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::format(path, e.to_string()))?;
    let pixels = width as usize * height as usize;
    let mut planes = vec![0f32; pixels * bands];
    r.read_f32_into::<LittleEndian>(&mut planes)
        .map_err(short)?;
    if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after cube data"));
    }
    let mut data = vec![0.0; pixels * bands];
    for b in 0..bands {
        for p in 0..pixels {
            data[p * bands + b] = planes[b * pixels + p] as f64;
        }
    }
    SpectralCube::new(width, height, grid, data).map_err(|e| Error::format(path, e.to_string()))
}

fn write_cube_csv(path: &Path, cube: &SpectralCube) -> Result<()> {
    let mut s = band_header("x,y", cube.grid());
    for row in 0..cube.height() {
        for col in 0..cube.width() {
            let _ = write!(s, "{col},{row}");
            push_values(&mut s, cube.pixel(col, row));
            s.push('\n');
        }
    }
    write_all(path, s.as_bytes())
}

fn read_cube_csv(path: &Path) -> Result<SpectralCube> {
    let mut r = csv_reader(path)?;
    let h = headers(path, &mut r)?;
    let grid = expect_columns(path, &h, &["x", "y"])?;
    let bands = grid.len();
    let mut rows: Vec<(u32, u32, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != bands + 2 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected {} fields, found {}", bands + 2, rec.len()),
            });
        }
        let coord = |f: &str, what| -> Result<u32> {
            f.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                message: format!("{what}: `{f}` is not a pixel index"),
            })
        };
        let x = coord(&rec[0], "x")?;
        let y = coord(&rec[1], "y")?;
        let values: Result<Vec<f64>> = (2..rec.len())
            .map(|j| parse_f64(path, line, &rec[j], "band value"))
            .collect();
        rows.push((x, y, values?));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "cube has no pixels"));
    }
    let width = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let height = rows.iter().map(|r| r.1).max().unwrap() + 1;
    if rows.len() != width as usize * height as usize {
        return Err(Error::format(path, "pixels do not form a full rectangle"));
    }
    let mut data = vec![f64::NAN; rows.len() * bands];
    for (x, y, v) in rows {
        let at = (y as usize * width as usize + x as usize) * bands;
        if !data[at].is_nan() {
            return Err(Error::format(
                path,
                format!("pixel ({x}, {y}) listed twice"),
            ));
        }
        data[at..at + bands].copy_from_slice(&v);
    }
    SpectralCube::new(width, height, grid, data).map_err(|e| Error::format(path, e.to_string()))
}

// ---- LiDAR cloud ----

pub fn read_cloud(path: &Path) -> Result<Vec<LidarPoint>> {
    if is_csv(path) {
        read_cloud_csv(path)
    } else {
        read_cloud_bin(path)
    }
}

pub fn write_cloud(path: &Path, cloud: &[LidarPoint]) -> Result<()> {
    if is_csv(path) {
        write_cloud_csv(path, cloud)
    } else {
        write_cloud_bin(path, cloud)
    }
}

fn write_cloud_bin(path: &Path, cloud: &[LidarPoint]) -> Result<()> {
    let with_intensity = cloud.iter().any(|p| p.intensity.is_some());
    let io = |e| Error::io(path, e);
    let mut buf = Vec::with_capacity(20 + cloud.len() * 32);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    buf.write_u64::<LittleEndian>(cloud.len() as u64)
        .map_err(io)?;
    buf.write_u32::<LittleEndian>(u32::from(with_intensity))
        .map_err(io)?;
    for p in cloud {
        for v in p.position.iter() {
            buf.write_f64::<LittleEndian>(*v).map_err(io)?;
        }
        if with_intensity {
            buf.write_f64::<LittleEndian>(p.intensity.unwrap_or(f64::NAN))
                .map_err(io)?;
        }
    }
    write_all(path, &buf)
}

fn read_cloud_bin(path: &Path) -> Result<Vec<LidarPoint>> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated cloud header"))?;
    if &magic != CLOUD_MAGIC {
        return Err(Error::format(path, "not a point cloud (bad magic)"));
    }
    let short = |_| Error::format(path, "truncated cloud");
    let version = r.read_u32::<LittleEndian>().map_err(short)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported cloud version {version}"),
        ));
    }
    let count = r.read_u64::<LittleEndian>().map_err(short)?;
    let flags = r.read_u32::<LittleEndian>().map_err(short)?;
    if flags & !1 != 0 {
        return Err(Error::format(
            path,
            format!("unknown cloud flags {flags:#x}"),
        ));
    }
    let with_intensity = flags & 1 == 1;
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    for i in 0..count {
        let mut xyz = [0f64; 3];
        r.read_f64_into::<LittleEndian>(&mut xyz).map_err(short)?;
        if !xyz.iter().all(|v| v.is_finite()) {
            return Err(Error::format(
                path,
                format!("point {i} has a non-finite coordinate"),
            ));
        }
        let intensity = if with_intensity {
            Some(r.read_f64::<LittleEndian>().map_err(short)?).filter(|v| !v.is_nan())
        } else {
            None
        };
        out.push(LidarPoint {
            position: Vector3::from(xyz),
            intensity,
        });
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after cloud data"));
    }
    Ok(out)
}

fn write_cloud_csv(path: &Path, cloud: &[LidarPoint]) -> Result<()> {
    let with_intensity = cloud.iter().any(|p| p.intensity.is_some());
    let mut s = String::from(if with_intensity {
        "x,y,z,intensity\n"
    } else {
        "x,y,z\n"
    });
    for p in cloud {
        let _ = write!(s, "{},{},{}", p.position.x, p.position.y, p.position.z);
        if with_intensity {
            s.push(',');
            if let Some(i) = p.intensity {
                let _ = write!(s, "{i}");
            }
        }
        s.push('\n');
    }
    write_all(path, s.as_bytes())
}

fn read_cloud_csv(path: &Path) -> Result<Vec<LidarPoint>> {
    let mut r = csv_reader(path)?;
    let h = headers(path, &mut r)?;
    let with_intensity = match h.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "intensity"] => true,
        _ => {
            return Err(Error::format(
                path,
                "header must be `x,y,z` or `x,y,z,intensity`",
            ))
        }
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let x = parse_f64(path, line, &rec[0], "x")?;
        let y = parse_f64(path, line, &rec[1], "y")?;
        let z = parse_f64(path, line, &rec[2], "z")?;
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: "non-finite coordinate".into(),
            });
        }
        let intensity = if with_intensity {
            parse_opt(path, line, &rec[3], "intensity")?
        } else {
            None
        };
        out.push(LidarPoint {
            position: Vector3::new(x, y, z),
            intensity,
        });
    }
    Ok(out)
}

// ---- augmented cloud ----

const AUGMENTED_FIXED: [&str; 5] = ["x", "y", "z", "plants_probability", "mass_density"];

/// Writes sensor- or world-frame augmented points; points without
/// reflectance leave their band fields empty.
pub fn write_augmented(path: &Path, points: &[AugmentedPoint]) -> Result<()> {
    let grid = points
        .iter()
        .find_map(|p| p.reflectance.as_ref().map(|r| r.grid().clone()));
    let mut s = match &grid {
        Some(g) => band_header(&AUGMENTED_FIXED.join(","), g),
        None => format!("{}\n", AUGMENTED_FIXED.join(",")),
    };
    let bands = grid.as_ref().map_or(0, BandGrid::len);
    for p in points {
        let _ = write!(s, "{},{},{},", p.position.x, p.position.y, p.position.z);
        if let Some(v) = p.plants_probability {
            let _ = write!(s, "{v}");
        }
        s.push(',');
        if let Some(v) = p.mass_density {
            let _ = write!(s, "{v}");
        }
        match &p.reflectance {
            Some(r) if Some(r.grid()) == grid.as_ref() => push_values(&mut s, r.values()),
            Some(_) => return Err(Error::GridMismatch),
            None => s.push_str(&",".repeat(bands)),
        }
        s.push('\n');
    }
    write_all(path, s.as_bytes())
}

/// Reads an augmented cloud; points are tagged with `frame`.
pub fn read_augmented(path: &Path, frame: Frame) -> Result<Vec<AugmentedPoint>> {
    let mut r = csv_reader(path)?;
    let h = headers(path, &mut r)?;
    let grid = if h.len() == AUGMENTED_FIXED.len() {
        if h.iter().zip(AUGMENTED_FIXED).any(|(a, b)| a != b) {
            return Err(Error::format(
                path,
                format!("header must start with `{}`", AUGMENTED_FIXED.join(",")),
            ));
        }
        None
    } else {
        Some(expect_columns(path, &h, &AUGMENTED_FIXED)?)
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != h.len() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected {} fields, found {}", h.len(), rec.len()),
            });
        }
        let pos = Vector3::new(
            parse_f64(path, line, &rec[0], "x")?,
            parse_f64(path, line, &rec[1], "y")?,
            parse_f64(path, line, &rec[2], "z")?,
        );
        let reflectance = match &grid {
            Some(g) if !rec[5].is_empty() => {
                let values: Result<Vec<f64>> = (5..rec.len())
                    .map(|j| parse_f64(path, line, &rec[j], "band value"))
                    .collect();
                Some(
                    ReflectanceSpectrum::new(g.clone(), values?).map_err(|e| Error::Parse {
                        path: path.into(),
                        line,
                        message: e.to_string(),
                    })?,
                )
            }
            _ => None,
        };
        let p = AugmentedPoint {
            position: pos,
            frame,
            reflectance,
            plants_probability: parse_opt(path, line, &rec[3], "plants_probability")?,
            mass_density: parse_opt(path, line, &rec[4], "mass_density")?,
        };
        p.check().map_err(|e| Error::Parse {
            path: path.into(),
            line,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

// ---- labeled map ----

pub fn write_labeled(path: &Path, points: &[LabeledPoint]) -> Result<()> {
    let Some(first) = points.first() else {
        return Err(Error::invalid("labeled map", "no points to write"));
    };
    let grid = first.reflectance.grid();
    let mut s = band_header("x,y,z,label", grid);
    for p in points {
        if p.reflectance.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let _ = write!(
            s,
            "{},{},{},{}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.label.name()
        );
        push_values(&mut s, p.reflectance.values());
        s.push('\n');
    }
    write_all(path, s.as_bytes())
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledPoint>> {
    let mut r = csv_reader(path)?;
    let h = headers(path, &mut r)?;
    let grid = expect_columns(path, &h, &["x", "y", "z", "label"])?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != h.len() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected {} fields, found {}", h.len(), rec.len()),
            });
        }
        let parse_err = |e: Error| Error::Parse {
            path: path.into(),
            line,
            message: e.to_string(),
        };
        let label: Label = rec[3].parse().map_err(parse_err)?;
        let values: Result<Vec<f64>> = (4..rec.len())
            .map(|j| parse_f64(path, line, &rec[j], "band value"))
            .collect();
        out.push(LabeledPoint {
            position: Vector3::new(
                parse_f64(path, line, &rec[0], "x")?,
                parse_f64(path, line, &rec[1], "y")?,
                parse_f64(path, line, &rec[2], "z")?,
            ),
            label,
            reflectance: ReflectanceSpectrum::new(grid.clone(), values?).map_err(parse_err)?,
        });
    }
    Ok(out)
}

// ---- calibration ----

/// Calibration CSV: header `wavelength_nm,c0,c1,…`; one row per output band,
/// holding its wavelength and the matrix row.
pub fn read_calibration(path: &Path) -> Result<SpectralCalibration> {
    let mut r = csv_reader(path)?;
    let h = headers(path, &mut r)?;
    if h.first().map(String::as_str) != Some("wavelength_nm") || h.len() < 2 {
        return Err(Error::format(
            path,
            "header must be `wavelength_nm,c0,c1,...`",
        ));
    }
    let n = h.len() - 1;
    let mut wavelengths = Vec::new();
    let mut entries = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        wavelengths.push(parse_f64(path, line, &rec[0], "wavelength_nm")?);
        for j in 1..=n {
            entries.push(parse_f64(path, line, &rec[j], "coefficient")?);
        }
    }
    if wavelengths.is_empty() {
        return Err(Error::format(path, "calibration has no rows"));
    }
    let m = wavelengths.len();
    let grid = BandGrid::new(wavelengths).map_err(|e| Error::format(path, e.to_string()))?;
    SpectralCalibration::new(DMatrix::from_row_slice(m, n, &entries), grid)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_calibration(path: &Path, cal: &SpectralCalibration) -> Result<()> {
    let mut s = String::from("wavelength_nm");
    for j in 0..cal.input_channels() {
        let _ = write!(s, ",c{j}");
    }
    s.push('\n');
    for (i, w) in cal.output_grid().as_slice().iter().enumerate() {
        let _ = write!(s, "{w}");
        let row: Vec<f64> = cal.matrix().row(i).iter().copied().collect();
        push_values(&mut s, &row);
        s.push('\n');
    }
    write_all(path, s.as_bytes())
}

// ---- camera config and poses ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    /// LiDAR-to-camera.
    pub extrinsics: RigidTransform,
}

pub fn read_camera_config(path: &Path) -> Result<CameraConfig> {
    let cfg: CameraConfig =
        toml::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    cfg.intrinsics
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(cfg)
}

pub fn write_camera_config(path: &Path, cfg: &CameraConfig) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| Error::format(path, e.to_string()))?;
    write_all(path, text.as_bytes())
}

/// TUM trajectory lines: `timestamp tx ty tz qx qy qz qw`; `#` starts a
/// comment.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = read_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 8 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected 8 fields, found {}", f.len()),
            });
        }
        let v: Result<Vec<f64>> = f
            .iter()
            .map(|s| parse_f64(path, line, s, "pose field"))
            .collect();
        let v = v?;
        let t =
            RigidTransform::from_quaternion(v[7], v[4], v[5], v[6], Vector3::new(v[1], v[2], v[3]))
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line,
                    message: e.to_string(),
                })?;
        out.push(Pose {
            sensor_to_world: t,
            timestamp: v[0],
        });
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.sensor_to_world.translation();
        let q = p.sensor_to_world.quaternion();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    write_all(path, s.as_bytes())
}

// ---- grid ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub origin: [f64; 2],
    pub origin_cell: [i64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub init_density: f64,
    /// Row-major, row 0 at the lowest y: `1` observed, `0` unknown.
    pub observed: Vec<u8>,
}

/// Paths of the three grid artifacts sharing a stem.
pub fn grid_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        stem.with_extension("csv"),
        stem.with_extension("json"),
        stem.with_extension("pgm"),
    )
}

/// Writes `<stem>.csv` (densities, one grid row per line, lowest y first),
/// `<stem>.json` (geometry and state mask) and `<stem>.pgm` (preview).
pub fn write_grid(stem: &Path, grid: &MassDensityGrid) -> Result<()> {
    let (csv_path, json_path, pgm_path) = grid_paths(stem);
    let mut s = String::new();
    for row in grid.values().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    write_all(&csv_path, s.as_bytes())?;
    let (ox, oy) = grid.origin();
    let sidecar = GridSidecar {
        origin: [ox, oy],
        origin_cell: [grid.origin_cell().0, grid.origin_cell().1],
        cell_size: grid.cell_size(),
        width: grid.width(),
        height: grid.height(),
        init_density: grid.init_density(),
        observed: grid
            .states()
            .iter()
            .map(|s| u8::from(*s == CellState::Observed))
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(&json_path, e.to_string()))?;
    json.push('\n');
    write_all(&json_path, json.as_bytes())?;
    write_all(&pgm_path, &grid_pgm(grid, &[]))
}

/// Reads a grid from its CSV and the JSON sidecar next to it.
pub fn read_grid(path: &Path) -> Result<MassDensityGrid> {
    let (csv_path, json_path, _) = grid_paths(path);
    let sidecar: GridSidecar = serde_json::from_str(&read_string(&json_path)?)
        .map_err(|e| Error::format(&json_path, e.to_string()))?;
    let mut values = Vec::with_capacity(sidecar.width * sidecar.height);
    for (i, raw) in read_string(&csv_path)?.lines().enumerate() {
        let line = i as u64 + 1;
        let row: Result<Vec<f64>> = raw
            .split(',')
            .map(|f| parse_f64(&csv_path, line, f, "density"))
            .collect();
        let row = row?;
        if row.len() != sidecar.width {
            return Err(Error::Parse {
                path: csv_path.clone(),
                line,
                message: format!("expected {} cells, found {}", sidecar.width, row.len()),
            });
        }
        values.extend(row);
    }
    let states = sidecar
        .observed
        .iter()
        .map(|&o| {
            if o == 0 {
                CellState::Unknown
            } else {
                CellState::Observed
            }
        })
        .collect();
    MassDensityGrid::from_parts(
        sidecar.cell_size,
        (sidecar.origin_cell[0], sidecar.origin_cell[1]),
        sidecar.width,
        sidecar.height,
        values,
        states,
        sidecar.init_density,
    )
    .map_err(|e| Error::format(&csv_path, e.to_string()))
}

/// A path drawn on the preview image.
pub struct Overlay<'a> {
    pub id: &'a str,
    pub alpha: f64,
    pub cells: &'a [(i64, i64)],
}

/// Binary graymap, top row at the highest y. Free cells are bright and dense
/// ones dark on a log scale up to 159; overlaid path cells are drawn at
/// `160 + 95·α` and listed in header comments.
pub fn grid_pgm(grid: &MassDensityGrid, overlays: &[Overlay<'_>]) -> Vec<u8> {
    let top = grid
        .values()
        .iter()
        .copied()
        .fold(grid.init_density(), f64::max)
        .max(1.0);
    let scale = (1.0 + top).ln();
    let (w, h) = (grid.width(), grid.height());
    let mut pixels = vec![0u8; w * h];
    for r in 0..h {
        for c in 0..w {
            let v = grid.values()[r * w + c];
            let level = 159.0 * (1.0 - (1.0 + v).ln() / scale);
            pixels[(h - 1 - r) * w + c] = level.round().clamp(0.0, 159.0) as u8;
        }
    }
    let (oc, or) = grid.origin_cell();
    for o in overlays {
        let shade = (160.0 + 95.0 * o.alpha.clamp(0.0, 1.0)).round() as u8;
        for &(i, j) in o.cells {
            let (c, r) = (i - oc, j - or);
            if c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h {
                pixels[(h - 1 - r as usize) * w + c as usize] = shade;
            }
        }
    }
    let mut out = String::from("P5\n");
    for o in overlays {
        let _ = writeln!(out, "# path {} alpha={}", o.id, o.alpha);
    }
    let _ = write!(out, "{w} {h}\n255\n");
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&pixels);
    bytes
}

pub fn write_pgm(path: &Path, bytes: &[u8]) -> Result<()> {
    write_all(path, bytes)
}

// ---- candidates and reports ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateFile {
    pub candidates: Vec<PathCandidate>,
}

pub fn read_candidates(path: &Path) -> Result<Vec<PathCandidate>> {
    let file: CandidateFile =
        serde_json::from_str(&read_string(path)?).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    for (i, c) in file.candidates.iter().enumerate() {
        c.validate()
            .map_err(|e| Error::format(path, format!("candidates[{i}]: {e}")))?;
    }
    Ok(file.candidates)
}

pub fn write_candidates(path: &Path, candidates: &[PathCandidate]) -> Result<()> {
    let file = CandidateFile {
        candidates: candidates.to_vec(),
    };
    let mut s =
        serde_json::to_string_pretty(&file).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_all(path, s.as_bytes())
}

/// One line per candidate: id, α, ln α, integrated mass, area, length,
/// crossed cells and whether it was selected.
pub fn costs_csv(eval: &Evaluation) -> String {
    let mut s = String::from(
        "id,alpha,log_alpha,integrated_mass_kg,crossed_area_m2,length_m,cells,selected\n",
    );
    for c in &eval.costs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            c.id,
            c.cost.alpha,
            c.cost.log_alpha,
            c.cost.integrated_mass,
            c.cost.crossed_area,
            c.length_m,
            c.cost.cells.len(),
            c.id == eval.selected
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_all(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_all(path, s.as_bytes())
}

/// Benchmark rows without timings, so the file is reproducible.
pub fn report_csv(reports: &[SegmentationReport]) -> String {
    let mut s =
        String::from("index,iou,precision,recall,accuracy,f1,specificity,threshold,tp,fp,tn,fn\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index_name,
            r.iou,
            r.precision,
            r.recall,
            r.accuracy,
            r.f1,
            r.specificity,
            r.threshold.map_or(String::new(), |t| t.to_string()),
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_
        );
    }
    s
}

/// Parses a TOML document from a file.
pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_all(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::BandGrid;

    fn grid3() -> BandGrid {
        BandGrid::new(vec![650.0, 700.0, 810.0]).unwrap()
    }

    #[test]
    fn cube_round_trips_in_both_forms() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| (i as f32 * 0.125) as f64).collect();
        let cube = SpectralCube::new(2, 3, grid3(), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.bin", "c.csv"] {
            let p = dir.path().join(name);
            write_cube(&p, &cube).unwrap();
            assert_eq!(read_cube(&p).unwrap(), cube);
        }
    }

    #[test]
    fn cube_binary_layout() {
        let cube = SpectralCube::new(2, 1, grid3(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_cube(&p, &cube).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"MSCB");
        assert_eq!(bytes.len(), 20 + 3 * 4 + 6 * 4);
        // first plane (650 nm) holds pixel 0 then pixel 1
        let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        assert_eq!((f(32), f(36), f(40)), (1.0, 4.0, 2.0));
    }

    #[test]
    fn bad_cube_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_cube(&p), Err(Error::Format { .. })));
        assert!(matches!(
            read_cube(&dir.path().join("missing.bin")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn cloud_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = vec![
            LidarPoint::new(0.1, -2.0, 3.5),
            LidarPoint {
                position: Vector3::new(1.0 / 3.0, 0.0, 1e-12),
                intensity: Some(0.25),
            },
        ];
        for name in ["c.bin", "c.csv"] {
            let p = dir.path().join(name);
            write_cloud(&p, &cloud).unwrap();
            assert_eq!(read_cloud(&p).unwrap(), cloud);
        }
        let plain = vec![LidarPoint::new(1.0, 2.0, 3.0)];
        let p = dir.path().join("plain.csv");
        write_cloud(&p, &plain).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x,y,z\n1,2,3\n");
    }

    #[test]
    fn augmented_round_trip_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let r = ReflectanceSpectrum::new(grid3(), vec![0.1, 0.2, 0.3]).unwrap();
        let pts = vec![
            AugmentedPoint {
                position: Vector3::new(1.0, 2.0, 3.0),
                frame: Frame::Sensor,
                reflectance: Some(r),
                plants_probability: Some(0.75),
                mass_density: Some(620.0),
            },
            AugmentedPoint::bare(Vector3::new(4.0, 5.0, 6.0), Frame::Sensor),
        ];
        let p = dir.path().join("a.csv");
        write_augmented(&p, &pts).unwrap();
        assert_eq!(read_augmented(&p, Frame::Sensor).unwrap(), pts);
    }

    #[test]
    fn labeled_round_trip_and_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![LabeledPoint {
            position: Vector3::new(0.5, 0.25, 0.0),
            label: Label::Grass,
            reflectance: ReflectanceSpectrum::new(grid3(), vec![0.05, 0.2, 0.4]).unwrap(),
        }];
        let p = dir.path().join("l.csv");
        write_labeled(&p, &pts).unwrap();
        assert_eq!(read_labeled(&p).unwrap(), pts);
        std::fs::write(&p, "x,y,z,label,650\n0,0,0,Tree,0.1\n").unwrap();
        assert!(matches!(
            read_labeled(&p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cal = SpectralCalibration::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 2.0, 0.0]),
            BandGrid::new(vec![650.0, 810.0]).unwrap(),
        )
        .unwrap();
        let p = dir.path().join("m.csv");
        write_calibration(&p, &cal).unwrap();
        let back = read_calibration(&p).unwrap();
        assert_eq!(back.matrix(), cal.matrix());
        assert_eq!(back.output_grid(), cal.output_grid());
    }

    #[test]
    fn poses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let poses = vec![Pose {
            sensor_to_world: RigidTransform::from_euler(
                0.1,
                -0.2,
                0.3,
                Vector3::new(1.0, 2.0, 3.0),
            ),
            timestamp: 1.5,
        }];
        let p = dir.path().join("poses.txt");
        write_poses(&p, &poses).unwrap();
        let back = read_poses(&p).unwrap();
        assert_eq!(back[0].timestamp, 1.5);
        let x = Vector3::new(0.3, -1.0, 2.0);
        let d = back[0].sensor_to_world.apply(&x) - poses[0].sensor_to_world.apply(&x);
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn grid_round_trip_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let g = MassDensityGrid::from_parts(
            0.5,
            (-2, 3),
            2,
            2,
            vec![0.0, 20.0, 2400.0, 250.0],
            vec![
                CellState::Observed,
                CellState::Observed,
                CellState::Observed,
                CellState::Unknown,
            ],
            250.0,
        )
        .unwrap();
        let stem = dir.path().join("grid");
        write_grid(&stem, &g).unwrap();
        assert_eq!(read_grid(&stem.with_extension("csv")).unwrap(), g);
        let pgm = std::fs::read(stem.with_extension("pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        let px = &pgm[pgm.len() - 4..];
        // top row is the higher y: 2400 (darkest) then unknown
        assert_eq!(px[0], 0);
        assert_eq!(px[2], 159);
        assert!(px[3] < px[2]);

        let over = grid_pgm(
            &g,
            &[Overlay {
                id: "p",
                alpha: 1.0,
                cells: &[(-2, 3)],
            }],
        );
        assert!(over.starts_with(b"P5\n# path p alpha=1\n"));
        assert_eq!(over[over.len() - 2], 255);
    }

    #[test]
    fn candidates_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"candidates":[{"id":"a","waypoints":[[0,0],[1,0]]}]}"#,
        )
        .unwrap();
        let msg = read_candidates(&p).unwrap_err().to_string();
        assert!(msg.contains("width"), "{msg}");
        std::fs::write(
            &p,
            r#"{"candidates":[{"id":"a","waypoints":[[0,0]],"width":0.4}]}"#,
        )
        .unwrap();
        let msg = read_candidates(&p).unwrap_err().to_string();
        assert!(msg.contains("waypoints"), "{msg}");
    }
}
