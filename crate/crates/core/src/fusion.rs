//! LiDAR/camera fusion: project LiDAR returns into the multispectral image
//! and attach the reflectance of the pixel they land on.
//!
//! Pixel `(col, row)` covers `[col, col+1) x [row, row+1)` in image
//! coordinates, so nearest-pixel sampling is a floor of the projected
//! coordinate. Points sharing a pixel all receive its spectrum; occlusion is
//! not resolved here.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{BandGrid, ReflectanceSpectrum, SpectralCalibration};

/// Depth below which a camera-frame point counts as behind the camera (m).
pub const DEFAULT_NEAR_PLANE: f64 = 0.05;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics plus optional Brown–Conrady distortion.
///
/// `distortion` uses the OpenCV ordering `[k1, k2, p1, p2, k3]`; shorter
/// lists are zero-padded and an empty list is a pure pinhole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub distortion: Vec<f64>,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(
                "intrinsics",
                "focal lengths must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("intrinsics", "image size must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid(
                "intrinsics",
                "principal point outside the image",
            ));
        }
        if self.distortion.len() > 5 || self.distortion.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid(
                "intrinsics",
                "distortion must be at most 5 finite coefficients [k1, k2, p1, p2, k3]",
            ));
        }
        Ok(())
    }

    fn coefficient(&self, i: usize) -> f64 {
        self.distortion.get(i).copied().unwrap_or(0.0)
    }

    /// Normalized image coordinates after lens distortion.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        if self.distortion.is_empty() {
            return (x, y);
        }
        let (k1, k2, p1, p2, k3) = (
            self.coefficient(0),
            self.coefficient(1),
            self.coefficient(2),
            self.coefficient(3),
            self.coefficient(4),
        );
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Camera-frame point at `depth` whose undistorted projection is `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// Rigid transform `p' = R p + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigidTransformRepr {
    /// Row-major 3x3 rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = Error;
    fn try_from(r: RigidTransformRepr) -> Result<Self> {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        RigidTransform::new(m, Vector3::from(r.translation))
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation;
        RigidTransformRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("transform", "non-finite entry"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid("transform", "rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid(
                "transform",
                "rotation determinant is not +1",
            ));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// From a unit quaternion `(w, x, y, z)`; the quaternion is renormalized.
    pub fn from_quaternion(
        w: f64,
        x: f64,
        y: f64,
        z: f64,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) || !q.norm().is_finite() {
            return Err(Error::invalid("transform", "quaternion has zero norm"));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        RigidTransform::new(*r.matrix(), translation)
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    pub position: Vector3<f64>,
    pub intensity: Option<f64>,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        LidarPoint {
            position: Vector3::new(x, y, z),
            intensity: None,
        }
    }
}

/// Outcome of projecting one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64 },
    OutsideFrustum,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64)> {
        match self {
            Projection::Pixel { u, v } => Some((u, v)),
            Projection::OutsideFrustum => None,
        }
    }
}

/// Projects a LiDAR point into the image; `extrinsics` maps LiDAR to camera.
pub fn project_point(
    intr: &CameraIntrinsics,
    extrinsics: &RigidTransform,
    p: &LidarPoint,
) -> Projection {
    project_point_with_near(intr, extrinsics, p, DEFAULT_NEAR_PLANE)
}

pub fn project_point_with_near(
    intr: &CameraIntrinsics,
    extrinsics: &RigidTransform,
    p: &LidarPoint,
    near: f64,
) -> Projection {
    let c = extrinsics.apply(&p.position);
    if !(c.z > near) {
        return Projection::OutsideFrustum;
    }
    let (xd, yd) = intr.distort(c.x / c.z, c.y / c.z);
    let u = intr.fx * xd + intr.cx;
    let v = intr.fy * yd + intr.cy;
    if u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64 {
        Projection::Pixel { u, v }
    } else {
        Projection::OutsideFrustum
    }
}

/// Coordinate frame a position is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Sensor,
    World,
}

/// A 3D point with optional spectral, semantic and mass payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPoint {
    pub position: Vector3<f64>,
    pub frame: Frame,
    pub reflectance: Option<ReflectanceSpectrum>,
    pub plants_probability: Option<f64>,
    /// kg/m²
    pub mass_density: Option<f64>,
}

impl AugmentedPoint {
    pub fn bare(position: Vector3<f64>, frame: Frame) -> Self {
        AugmentedPoint {
            position,
            frame,
            reflectance: None,
            plants_probability: None,
            mass_density: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.reflectance.is_none() && self.plants_probability.is_some() {
            return Err(Error::Invariant(
                "plants probability without reflectance".into(),
            ));
        }
        if self
            .mass_density
            .is_some_and(|d| !(d >= 0.0) || !d.is_finite())
        {
            return Err(Error::Invariant("negative mass density".into()));
        }
        Ok(())
    }
}

/// Multispectral image, pixel-interleaved: `data[(row*width + col)*bands + b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube {
    width: u32,
    height: u32,
    grid: BandGrid,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(width: u32, height: u32, grid: BandGrid, data: Vec<f64>) -> Result<Self> {
        let expected = width as usize * height as usize * grid.len();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "spectral cube samples",
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cube", "non-finite sample"));
        }
        Ok(SpectralCube {
            width,
            height,
            grid,
            data,
        })
    }

    pub fn uniform(width: u32, height: u32, grid: BandGrid, value: f64) -> Result<Self> {
        let n = width as usize * height as usize * grid.len();
        SpectralCube::new(width, height, grid, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn grid(&self) -> &BandGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, col: u32, row: u32) -> &[f64] {
        let b = self.grid.len();
        let start = (row as usize * self.width as usize + col as usize) * b;
        &self.data[start..start + b]
    }

    pub fn pixel_mut(&mut self, col: u32, row: u32) -> &mut [f64] {
        let b = self.grid.len();
        let start = (row as usize * self.width as usize + col as usize) * b;
        &mut self.data[start..start + b]
    }
}

/// Diagnostics from [`augment_cloud`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentStats {
    pub inside: usize,
    pub outside: usize,
    /// Reflectance values clamped by the spectral calibration.
    pub clamped_values: usize,
}

/// Attaches nearest-pixel reflectance to every point of `cloud`.
///
/// Output order equals input order. With a calibration, the cube holds raw
/// intensities and each sampled pixel goes through `r = M·i`; without one the
/// cube already holds reflectance.
pub fn augment_cloud(
    cloud: &[LidarPoint],
    cube: &SpectralCube,
    intr: &CameraIntrinsics,
    extrinsics: &RigidTransform,
    calibration: Option<&SpectralCalibration>,
) -> Result<(Vec<AugmentedPoint>, AugmentStats)> {
    intr.validate()?;
    if cube.width() != intr.width {
        return Err(Error::DimensionMismatch {
            what: "cube width vs intrinsics",
            expected: intr.width as usize,
            actual: cube.width() as usize,
        });
    }
    if cube.height() != intr.height {
        return Err(Error::DimensionMismatch {
            what: "cube height vs intrinsics",
            expected: intr.height as usize,
            actual: cube.height() as usize,
        });
    }
    if let Some(cal) = calibration {
        if cal.input_channels() != cube.grid().len() {
            return Err(Error::DimensionMismatch {
                what: "calibration input channels vs cube bands",
                expected: cal.input_channels(),
                actual: cube.grid().len(),
            });
        }
    }

    let out_grid = calibration.map_or_else(|| cube.grid().clone(), |c| c.output_grid().clone());
    let one = |p: &LidarPoint| -> Result<(AugmentedPoint, usize)> {
        let mut ap = AugmentedPoint::bare(p.position, Frame::Sensor);
        let mut clamped = 0;
        if let Some((u, v)) = project_point(intr, extrinsics, p).pixel() {
            let px = cube.pixel(u.floor() as u32, v.floor() as u32);
            let values = match calibration {
                Some(cal) => cal.linear_map(px)?,
                None => px.to_vec(),
            };
            let (spectrum, c) = ReflectanceSpectrum::clamped(out_grid.clone(), values)?;
            clamped = c;
            ap.reflectance = Some(spectrum);
        }
        Ok((ap, clamped))
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<(AugmentedPoint, usize)>> = {
        use rayon::prelude::*;
        cloud.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(AugmentedPoint, usize)>> = cloud.iter().map(one).collect();

    let mut stats = AugmentStats::default();
    let mut out = Vec::with_capacity(cloud.len());
    for r in results {
        let (ap, clamped) = r?;
        if ap.reflectance.is_some() {
            stats.inside += 1;
        } else {
            stats.outside += 1;
        }
        stats.clamped_values += clamped;
        out.push(ap);
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
            distortion: vec![],
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_point(
            &intr(),
            &RigidTransform::identity(),
            &LidarPoint::new(0.0, 0.0, 1.0),
        );
        assert_eq!(p, Projection::Pixel { u: 50.0, v: 50.0 });
    }

    #[test]
    fn behind_camera_is_outside() {
        let p = project_point(
            &intr(),
            &RigidTransform::identity(),
            &LidarPoint::new(0.0, 0.0, -1.0),
        );
        assert_eq!(p, Projection::OutsideFrustum);
        let near = project_point(
            &intr(),
            &RigidTransform::identity(),
            &LidarPoint::new(0.0, 0.0, 0.01),
        );
        assert_eq!(near, Projection::OutsideFrustum);
    }

    #[test]
    fn pinhole_arithmetic() {
        let p = project_point(
            &intr(),
            &RigidTransform::identity(),
            &LidarPoint::new(0.1, 0.0, 1.0),
        );
        let (u, v) = p.pixel().unwrap();
        assert_abs_diff_eq!(u, 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_is_outside() {
        let p = project_point(
            &intr(),
            &RigidTransform::identity(),
            &LidarPoint::new(10.0, 0.0, 1.0),
        );
        assert_eq!(p, Projection::OutsideFrustum);
    }

    #[test]
    fn radial_distortion_pushes_outward() {
        let mut k = intr();
        k.distortion = vec![0.1];
        let (u, _) = project_point(
            &k,
            &RigidTransform::identity(),
            &LidarPoint::new(0.2, 0.0, 1.0),
        )
        .pixel()
        .unwrap();
        // x' = 0.2 * (1 + 0.1 * 0.04)
        assert_abs_diff_eq!(u, 50.0 + 100.0 * 0.2 * 1.004, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        let s = Matrix3::identity() * 1.01;
        assert!(RigidTransform::new(s, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        let mut k = intr();
        k.cx = 100.0;
        assert!(k.validate().is_err());
        let mut k = intr();
        k.fx = 0.0;
        assert!(k.validate().is_err());
    }

    #[test]
    fn augment_examples() {
        let grid = BandGrid::vnir();
        let cube = SpectralCube::uniform(100, 100, grid.clone(), 0.3).unwrap();
        let (empty, _) =
            augment_cloud(&[], &cube, &intr(), &RigidTransform::identity(), None).unwrap();
        assert!(empty.is_empty());

        let cloud = [
            LidarPoint::new(0.0, 0.0, 1.0),
            LidarPoint::new(0.0, 0.0, -2.0),
        ];
        let (out, stats) =
            augment_cloud(&cloud, &cube, &intr(), &RigidTransform::identity(), None).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0]
            .reflectance
            .as_ref()
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 0.3));
        assert!(out[1].reflectance.is_none());
        assert_eq!(
            stats,
            AugmentStats {
                inside: 1,
                outside: 1,
                clamped_values: 0
            }
        );
    }

    #[test]
    fn augment_rejects_size_mismatch() {
        let cube = SpectralCube::uniform(10, 100, BandGrid::vnir(), 0.3).unwrap();
        let err =
            augment_cloud(&[], &cube, &intr(), &RigidTransform::identity(), None).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn augment_samples_nearest_pixel() {
        let grid = BandGrid::new(vec![650.0]).unwrap();
        let mut cube = SpectralCube::uniform(100, 100, grid, 0.0).unwrap();
        cube.pixel_mut(60, 50)[0] = 0.7;
        let (out, _) = augment_cloud(
            &[LidarPoint::new(0.105, 0.005, 1.0)],
            &cube,
            &intr(),
            &RigidTransform::identity(),
            None,
        )
        .unwrap();
        assert_eq!(out[0].reflectance.as_ref().unwrap().values(), &[0.7]);
    }

    #[test]
    fn compose_and_inverse() {
        let a = RigidTransform::from_euler(0.1, -0.2, 0.3, Vector3::new(1.0, 2.0, 3.0));
        let id = a.compose(&a.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().amax() < 1e-12);
        let q = a.quaternion();
        let b = RigidTransform::from_quaternion(q.w, q.i, q.j, q.k, *a.translation()).unwrap();
        assert!((b.rotation() - a.rotation()).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn identity_composition_is_neutral(x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.5f64..10.0,
                                           yaw in -0.3f64..0.3) {
            let e = RigidTransform::from_euler(0.0, 0.0, yaw, Vector3::new(0.1, 0.0, 0.0));
            let p = LidarPoint::new(x, y, z);
            let a = project_point(&intr(), &e, &p);
            let b = project_point(&intr(), &e.compose(&RigidTransform::identity()), &p);
            let c = project_point(&intr(), &RigidTransform::identity().compose(&e), &p);
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
        }

        #[test]
        fn back_projection_round_trip(u in 0.0f64..99.99, v in 0.0f64..99.99, d in 0.1f64..50.0) {
            let k = intr();
            let c = k.back_project(u, v, d);
            let p = LidarPoint { position: c, intensity: None };
            let (pu, pv) = project_point(&k, &RigidTransform::identity(), &p).pixel().unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }

        #[test]
        fn augment_preserves_length(pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 0..50)) {
            let cloud: Vec<LidarPoint> = pts.iter().map(|&(x, y, z)| LidarPoint::new(x, y, z)).collect();
            let cube = SpectralCube::uniform(100, 100, BandGrid::new(vec![650.0]).unwrap(), 0.2).unwrap();
            let (out, _) = augment_cloud(&cloud, &cube, &intr(), &RigidTransform::identity(), None).unwrap();
            prop_assert_eq!(out.len(), cloud.len());
            for (a, p) in out.iter().zip(&cloud) {
                prop_assert_eq!(a.position, p.position);
            }
        }
    }
}
