//! Rectified pinhole camera model for LiDAR-to-image projection.
//!
//! A LiDAR point `p` (homogeneous) maps to the image through
//! `P_rect · R_rect · T_range→cam · p`. The "camera frame" used throughout the
//! crate is the rectified camera frame, i.e. `R_rect · T_range→cam · p`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3, Vector3, Vector4};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;
const BOTTOM_ROW_TOL: f64 = 1e-9;
/// Projected third coordinates at or below this are treated as behind the camera.
const MIN_PROJECTED_DEPTH: f64 = 1e-9;

/// Camera calibration for one LiDAR/camera pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBundle {
    p_rect: Matrix3x4<f64>,
    r_rect: Matrix3<f64>,
    t_range_cam: Matrix4<f64>,
    lidar_to_camera: Matrix4<f64>,
    camera_to_lidar: Matrix4<f64>,
    intrinsic_inverse: Option<Matrix3<f64>>,
}

impl CalibrationBundle {
    pub fn new(p_rect: Matrix3x4<f64>, r_rect: Matrix3<f64>, t_range_cam: Matrix4<f64>) -> Result<Self> {
        if p_rect.iter().chain(r_rect.iter()).chain(t_range_cam.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCalibration("non-finite matrix entry".into()));
        }
        let ortho_err = (r_rect.transpose() * r_rect - Matrix3::identity()).abs().max();
        if ortho_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidCalibration(format!(
                "R_rect is not orthonormal (max |RᵀR - I| = {ortho_err:.3e})"
            )));
        }
        let bottom = t_range_cam.row(3);
        let bottom_err = (bottom - Vector4::new(0.0, 0.0, 0.0, 1.0).transpose()).abs().max();
        if bottom_err > BOTTOM_ROW_TOL {
            return Err(Error::InvalidCalibration(format!(
                "T_range→cam bottom row must be (0, 0, 0, 1), got {:?}",
                bottom.iter().collect::<Vec<_>>()
            )));
        }
        if p_rect[(0, 0)] == 0.0 || p_rect[(1, 1)] == 0.0 {
            return Err(Error::InvalidCalibration("P_rect has a zero focal entry".into()));
        }

        let mut r4 = Matrix4::identity();
        r4.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_rect);
        let lidar_to_camera = r4 * t_range_cam;
        let camera_to_lidar = lidar_to_camera
            .try_inverse()
            .ok_or_else(|| Error::InvalidCalibration("R_rect·T_range→cam is singular".into()))?;
        let intrinsic_inverse = p_rect.fixed_view::<3, 3>(0, 0).into_owned().try_inverse();

        Ok(Self { p_rect, r_rect, t_range_cam, lidar_to_camera, camera_to_lidar, intrinsic_inverse })
    }

    /// Identity extrinsics with a `[K | 0]` camera of focal `f` and principal point `(cx, cy)`.
    pub fn pinhole(f: f64, cx: f64, cy: f64) -> Result<Self> {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            f, 0.0, cx, 0.0,
            0.0, f, cy, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Self::new(p, Matrix3::identity(), Matrix4::identity())
    }

    pub fn p_rect(&self) -> &Matrix3x4<f64> {
        &self.p_rect
    }

    pub fn r_rect(&self) -> &Matrix3<f64> {
        &self.r_rect
    }

    pub fn t_range_cam(&self) -> &Matrix4<f64> {
        &self.t_range_cam
    }

    /// `R_rect · T_range→cam` as a 4×4 rigid transform.
    pub fn lidar_to_camera(&self) -> &Matrix4<f64> {
        &self.lidar_to_camera
    }

    pub fn camera_to_lidar(&self) -> &Matrix4<f64> {
        &self.camera_to_lidar
    }

    /// The full 3×4 LiDAR-to-image product `P_rect · R_rect · T_range→cam`.
    pub fn composite(&self) -> Matrix3x4<f64> {
        self.p_rect * self.lidar_to_camera
    }

    /// Rescales the projection rows so pixel coordinates scale by `(sx, sy)`.
    ///
    /// Pixel `(u, v)` of the original image becomes `(sx·u, sy·v)`, so an
    /// integer-factor upscale keeps the original lattice as a sub-lattice.
    pub fn scaled(&self, sx: f64, sy: f64) -> Result<Self> {
        let mut p = self.p_rect;
        p.row_mut(0).scale_mut(sx);
        p.row_mut(1).scale_mut(sy);
        Self::new(p, self.r_rect, self.t_range_cam)
    }

    /// Projects a point expressed in the rectified camera frame.
    pub fn project_camera_point(&self, x: &Point3<f64>) -> Option<Pixel> {
        let uvw = self.p_rect * x.to_homogeneous();
        dehomogenize(&uvw)
    }

    /// Third projected coordinate (the depth reported in depth images) of a camera-frame point.
    pub fn camera_depth(&self, x: &Point3<f64>) -> f64 {
        (self.p_rect.row(2) * x.to_homogeneous())[0]
    }
}

fn dehomogenize(uvw: &Vector3<f64>) -> Option<Pixel> {
    let w = uvw.z;
    if w <= MIN_PROJECTED_DEPTH {
        return None;
    }
    Some(Pixel { u: uvw.x / w, v: uvw.y / w, depth: w })
}

/// Image coordinates plus the projected depth in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Half-line `origin + t·direction`, `t ≥ 0`, with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Builds a ray, normalizing `direction`. Returns `None` for a zero or non-finite direction.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Option<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return None;
        }
        Some(Self { origin, direction: direction / n })
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }

    /// Applies an affine 4×4 transform. For rigid transforms `t` keeps its metric meaning.
    pub fn transformed(&self, m: &Matrix4<f64>) -> Ray {
        let origin = Point3::from_homogeneous(m * self.origin.to_homogeneous()).unwrap_or(self.origin);
        let direction = m.fixed_view::<3, 3>(0, 0) * self.direction;
        Ray::new(origin, direction).unwrap_or(*self)
    }
}

/// Projects a homogeneous LiDAR-frame point into the image.
///
/// The input is renormalized to homogeneous-1 form first. Returns `None` for
/// points at or behind the image plane.
pub fn project_point(p: &Vector4<f64>, calib: &CalibrationBundle) -> Option<Pixel> {
    if p.w == 0.0 || !p.w.is_finite() {
        return None;
    }
    let p = p / p.w;
    let uvw = calib.composite() * p;
    dehomogenize(&uvw)
}

/// The camera-frame ray through pixel coordinates `(u, v)`.
///
/// The origin is the camera centre `-M⁻¹·p₄` of `P_rect = [M | p₄]`, so rays
/// of a camera with a baseline offset (KITTI cameras 1–3) still reproject to
/// the requested pixel.
pub fn backproject_ray(u: f64, v: f64, calib: &CalibrationBundle) -> Result<Ray> {
    let m_inv = calib
        .intrinsic_inverse
        .ok_or_else(|| Error::InvalidCalibration("left 3×3 block of P_rect is singular".into()))?;
    let p4 = calib.p_rect.column(3).into_owned();
    let origin = Point3::from(-(m_inv * p4));
    let direction = m_inv * Vector3::new(u, v, 1.0);
    Ray::new(origin, direction).ok_or_else(|| Error::InvalidCalibration(format!("no ray through pixel ({u}, {v})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn kitti_like() -> CalibrationBundle {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            721.5, 0.0, 609.6, 44.9,
            0.0, 721.5, 172.9, 0.2,
            0.0, 0.0, 1.0, 0.003,
        );
        CalibrationBundle::new(p, Matrix3::identity(), Matrix4::identity()).unwrap()
    }

    #[test]
    fn optical_axis_point() {
        let c = CalibrationBundle::pinhole(1.0, 0.0, 0.0).unwrap();
        let px = project_point(&Vector4::new(0.0, 0.0, 5.0, 1.0), &c).unwrap();
        assert_eq!((px.u, px.v, px.depth), (0.0, 0.0, 5.0));
    }

    #[test]
    fn behind_camera_is_rejected() {
        let c = CalibrationBundle::pinhole(1.0, 0.0, 0.0).unwrap();
        assert!(project_point(&Vector4::new(0.0, 0.0, -1.0, 1.0), &c).is_none());
        assert!(project_point(&Vector4::new(1.0, 1.0, 0.0, 1.0), &c).is_none());
    }

    #[test]
    fn kitti_like_projection_matches_hand_multiply() {
        // rows of P dotted with (0, 0, 10, 1):
        // u' = 609.6*10 + 44.9 = 6140.9, v' = 172.9*10 + 0.2 = 1729.2, w = 10.003
        let px = project_point(&Vector4::new(0.0, 0.0, 10.0, 1.0), &kitti_like()).unwrap();
        assert_abs_diff_eq!(px.u, 6140.9 / 10.003, epsilon = 1e-9);
        assert_abs_diff_eq!(px.v, 1729.2 / 10.003, epsilon = 1e-9);
        assert_abs_diff_eq!(px.depth, 10.003, epsilon = 1e-12);
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let c = CalibrationBundle::pinhole(1.0, 0.0, 0.0).unwrap();
        let ray = backproject_ray(0.0, 0.0, &c).unwrap();
        assert_abs_diff_eq!(ray.direction, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn off_center_ray_direction() {
        let c = CalibrationBundle::pinhole(721.5, 609.6, 172.9).unwrap();
        let (u, v) = (1000.0, 50.0);
        let expected = Vector3::new((u - 609.6) / 721.5, (v - 172.9) / 721.5, 1.0).normalize();
        let ray = backproject_ray(u, v, &c).unwrap();
        assert_abs_diff_eq!(ray.direction, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ray.origin, Point3::origin(), epsilon = 1e-15);
    }

    #[test]
    fn singular_intrinsics_error() {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let c = CalibrationBundle::new(p, Matrix3::identity(), Matrix4::identity()).unwrap();
        assert!(matches!(backproject_ray(1.0, 1.0, &c), Err(Error::InvalidCalibration(_))));
    }

    #[test]
    fn invariant_violations() {
        let p = *kitti_like().p_rect();
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CalibrationBundle::new(p, skew, Matrix4::identity()).is_err());
        let mut t = Matrix4::identity();
        t[(3, 0)] = 0.5;
        assert!(CalibrationBundle::new(p, Matrix3::identity(), t).is_err());
        let mut p0 = p;
        p0[(1, 1)] = 0.0;
        assert!(CalibrationBundle::new(p0, Matrix3::identity(), Matrix4::identity()).is_err());
    }

    fn rotated_calib(yaw: f64, pitch: f64) -> CalibrationBundle {
        let rot = nalgebra::Rotation3::from_euler_angles(0.01, pitch, yaw);
        let mut t = Matrix4::identity();
        // KITTI-style axis swap (x forward, y left, z up → x right, y down, z forward) plus an offset.
        let swap = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(&(swap * rot.matrix()));
        t[(0, 3)] = -0.004;
        t[(1, 3)] = -0.076;
        t[(2, 3)] = -0.27;
        let r_rect = *nalgebra::Rotation3::from_euler_angles(0.002, -0.003, 0.001).matrix();
        CalibrationBundle::new(*kitti_like().p_rect(), r_rect, t).unwrap()
    }

    proptest! {
        #[test]
        fn backprojection_round_trip(
            u in 0.0f64..1242.0, v in 0.0f64..375.0, t in 0.1f64..100.0,
            yaw in -0.1f64..0.1, pitch in -0.1f64..0.1,
        ) {
            let calib = rotated_calib(yaw, pitch);
            let ray = backproject_ray(u, v, &calib).unwrap();
            let lidar = Point3::from_homogeneous(calib.camera_to_lidar() * ray.at(t).to_homogeneous()).unwrap();
            let px = project_point(&lidar.to_homogeneous(), &calib).unwrap();
            prop_assert!((px.u - u).abs() < 1e-6 && (px.v - v).abs() < 1e-6, "{px:?} vs ({u}, {v})");
        }

        #[test]
        fn projection_is_scale_invariant(
            x in -20.0f64..20.0, y in -5.0f64..5.0, z in 1.0f64..80.0, s in 0.01f64..100.0,
        ) {
            let calib = kitti_like();
            let a = project_point(&Vector4::new(x, y, z, 1.0), &calib).unwrap();
            let b = project_point(&(Vector4::new(x, y, z, 1.0) * s), &calib).unwrap();
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9 && (a.depth - b.depth).abs() < 1e-9);
        }
    }
}
