//! LiDAR scans, KITTI calibration files and camera-frustum filtering.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3};

use crate::error::{Error, Result};
use crate::geometry::{project_point, CalibrationBundle};

const RECORD_BYTES: usize = 16;

/// One LiDAR return in the sensor frame. Stored as `f32` like the Velodyne container.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.x as f64, self.y as f64, self.z as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.points.iter().map(LidarPoint::position).collect()
    }
}

impl FromIterator<LidarPoint> for PointCloud {
    fn from_iter<I: IntoIterator<Item = LidarPoint>>(iter: I) -> Self {
        Self { points: iter.into_iter().collect() }
    }
}

/// Parses a Velodyne `.bin` scan: packed little-endian `f32` quadruples `(x, y, z, intensity)`.
///
/// Returns the cloud and the number of records dropped for holding non-finite values.
pub fn read_velodyne_bin(bytes: &[u8]) -> Result<(PointCloud, usize)> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedScan { len: bytes.len() });
    }
    let mut dropped = 0;
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for record in bytes.chunks_exact(RECORD_BYTES) {
        let mut v = [0f32; 4];
        for (dst, src) in v.iter_mut().zip(record.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("4-byte chunk"));
        }
        if v.iter().all(|x| x.is_finite()) {
            points.push(LidarPoint::new(v[0], v[1], v[2], v[3]));
        } else {
            dropped += 1;
        }
    }
    Ok((PointCloud { points }, dropped))
}

pub fn write_velodyne_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// `KEY: v1 v2 ...` lines. Values are kept as raw text so non-numeric entries
/// such as `calib_time` never cause errors unless requested.
fn kitti_entries(text: &str) -> HashMap<&str, &str> {
    text.lines()
        .filter_map(|line| line.split_once(':'))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}

fn kitti_values<const N: usize>(entries: &HashMap<&str, &str>, key: &str) -> Result<[f64; N]> {
    let raw = entries.get(key).ok_or_else(|| Error::MissingCalibrationKey { key: key.to_string() })?;
    let tokens: Vec<&str> = raw.split_whitespace().collect();
    if tokens.len() != N {
        return Err(Error::CalibrationValueCount { key: key.to_string(), expected: N, found: tokens.len() });
    }
    let mut out = [0.0; N];
    for (dst, tok) in out.iter_mut().zip(&tokens) {
        *dst = tok.parse().map_err(|_| Error::CalibrationValue { key: key.to_string(), value: tok.to_string() })?;
    }
    Ok(out)
}

/// Builds a [`CalibrationBundle`] from the KITTI `calib_cam_to_cam.txt` and
/// `calib_velo_to_cam.txt` texts, using `P_rect_0{camera_index}`.
pub fn parse_calibration(cam_to_cam_text: &str, velo_to_cam_text: &str, camera_index: u32) -> Result<CalibrationBundle> {
    let cam = kitti_entries(cam_to_cam_text);
    let velo = kitti_entries(velo_to_cam_text);

    let p = kitti_values::<12>(&cam, &format!("P_rect_0{camera_index}"))?;
    let r = kitti_values::<9>(&cam, "R_rect_00")?;
    let rot = kitti_values::<9>(&velo, "R")?;
    let trans = kitti_values::<3>(&velo, "T")?;

    let p_rect = Matrix3x4::from_row_slice(&p);
    let r_rect = Matrix3::from_row_slice(&r);
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::from_row_slice(&rot));
    t[(0, 3)] = trans[0];
    t[(1, 3)] = trans[1];
    t[(2, 3)] = trans[2];
    CalibrationBundle::new(p_rect, r_rect, t)
}

fn format_row(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Writes the two KITTI calibration texts for `calib`; values round-trip exactly.
pub fn write_calibration(calib: &CalibrationBundle, camera_index: u32) -> (String, String) {
    let p = calib.p_rect();
    let r = calib.r_rect();
    let t = calib.t_range_cam();
    let cam = format!(
        "R_rect_00: {}\nP_rect_0{camera_index}: {}\n",
        format_row(r.transpose().iter().copied()),
        format_row(p.transpose().iter().copied()),
    );
    let rot = t.fixed_view::<3, 3>(0, 0).transpose();
    let velo = format!(
        "R: {}\nT: {}\n",
        format_row(rot.iter().copied()),
        format_row((0..3).map(|i| t[(i, 3)])),
    );
    (cam, velo)
}

/// Keeps points projecting inside `[0, width) × [0, height)` with `0 < depth ≤ max_range`.
pub fn filter_to_frustum(cloud: &PointCloud, calib: &CalibrationBundle, width: usize, height: usize, max_range: f64) -> PointCloud {
    let (w, h) = (width as f64, height as f64);
    cloud
        .points
        .iter()
        .filter(|p| {
            project_point(&p.position().to_homogeneous(), calib)
                .is_some_and(|px| px.u >= 0.0 && px.u < w && px.v >= 0.0 && px.v < h && px.depth <= max_range)
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IDENTITY_CAM: &str = "calib_time: 09-Jan-2012 13:57:47\n\
        R_rect_00: 1 0 0 0 1 0 0 0 1\n\
        P_rect_00: 1 0 0 0 0 1 0 0 0 0 1 0\n\
        P_rect_02: 1 0 0 0 0 1 0 0 0 0 1 0\n";
    const IDENTITY_VELO: &str = "calib_time: 15-Mar-2012 11:37:16\nR: 1 0 0 0 1 0 0 0 1\nT: 0 0 0\ndelta_f: 0 0\n";

    // 2011_09_26 drive calibration.
    const KITTI_CAM: &str = "calib_time: 09-Jan-2012 13:57:47\n\
        corner_dist: 9.950000e-02\n\
        R_rect_00: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01\n\
        P_rect_00: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00\n\
        P_rect_02: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n";
    const KITTI_VELO: &str = "calib_time: 15-Mar-2012 11:37:16\n\
        R: 7.533745e-03 -9.999714e-01 -6.166020e-04 1.480249e-02 7.280733e-04 -9.998902e-01 9.998621e-01 7.523790e-03 1.480755e-02\n\
        T: -4.069766e-03 -7.631618e-02 -2.717806e-01\n";

    #[test]
    fn empty_scan() {
        let (cloud, dropped) = read_velodyne_bin(&[]).unwrap();
        assert!(cloud.is_empty());
        assert_eq!(dropped, 0);
    }

    #[test]
    fn single_record_hand_encoded() {
        // IEEE-754 single: 1.0 = 0x3F800000, 2.0 = 0x40000000, 3.0 = 0x40400000, 0.5 = 0x3F000000
        let bytes = [
            0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x3F,
        ];
        let (cloud, _) = read_velodyne_bin(&bytes).unwrap();
        assert_eq!(cloud.points, vec![LidarPoint::new(1.0, 2.0, 3.0, 0.5)]);
    }

    #[test]
    fn truncated_scan_is_malformed() {
        assert!(matches!(read_velodyne_bin(&[0u8; 15]), Err(Error::MalformedScan { len: 15 })));
    }

    #[test]
    fn non_finite_records_are_dropped_and_counted() {
        let cloud = PointCloud::new(vec![
            LidarPoint::new(1.0, 2.0, 3.0, 0.1),
            LidarPoint::new(f32::NAN, 0.0, 0.0, 0.0),
            LidarPoint::new(4.0, 5.0, 6.0, f32::INFINITY),
            LidarPoint::new(7.0, 8.0, 9.0, 0.2),
        ]);
        let (back, dropped) = read_velodyne_bin(&write_velodyne_bin(&cloud)).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(back.points, vec![cloud.points[0], cloud.points[3]]);
    }

    #[test]
    fn identity_calibration() {
        let c = parse_calibration(IDENTITY_CAM, IDENTITY_VELO, 2).unwrap();
        assert_eq!(*c.p_rect(), Matrix3x4::identity());
        assert_eq!(*c.r_rect(), Matrix3::identity());
        assert_eq!(*c.t_range_cam(), Matrix4::identity());
    }

    #[test]
    fn non_orthonormal_rect_is_rejected() {
        let cam = IDENTITY_CAM.replace("R_rect_00: 1 0 0 0 1 0 0 0 1", "R_rect_00: 1 0.2 0 0 1 0 0 0 1");
        assert!(matches!(parse_calibration(&cam, IDENTITY_VELO, 2), Err(Error::InvalidCalibration(_))));
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse_calibration(IDENTITY_CAM, IDENTITY_VELO, 3).unwrap_err();
        assert!(err.to_string().contains("P_rect_03"), "{err}");
        let err = parse_calibration(IDENTITY_CAM, "R: 1 0 0 0 1 0 0 0 1\n", 2).unwrap_err();
        assert!(matches!(err, Error::MissingCalibrationKey { ref key } if key == "T"));
    }

    #[test]
    fn wrong_value_count() {
        let err = parse_calibration(IDENTITY_CAM, "R: 1 0 0 0 1 0 0 0 1\nT: 0 0\n", 2).unwrap_err();
        assert!(matches!(err, Error::CalibrationValueCount { expected: 3, found: 2, .. }));
    }

    #[test]
    fn kitti_composite_matches_hand_product() {
        let c = parse_calibration(KITTI_CAM, KITTI_VELO, 2).unwrap();
        let p = [
            [7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01],
            [0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01],
            [0.0, 0.0, 1.0, 2.745884e-03],
        ];
        let r = [
            [9.999239e-01, 9.837760e-03, -7.445048e-03],
            [-9.869795e-03, 9.999421e-01, -4.278459e-03],
            [7.402527e-03, 4.351614e-03, 9.999631e-01],
        ];
        let t = [
            [7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03],
            [1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02],
            [9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01],
            [0.0, 0.0, 0.0, 1.0],
        ];
        // R (3x3) padded to 4x4, then P·R4·T with plain loops.
        let mut r4 = [[0.0; 4]; 4];
        for i in 0..3 {
            r4[i][..3].copy_from_slice(&r[i]);
        }
        r4[3][3] = 1.0;
        let mut rt = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                rt[i][j] = (0..4).map(|k| r4[i][k] * t[k][j]).sum();
            }
        }
        let composite = c.composite();
        for i in 0..3 {
            for j in 0..4 {
                let hand: f64 = (0..4).map(|k| p[i][k] * rt[k][j]).sum();
                assert!((composite[(i, j)] - hand).abs() < 1e-9, "({i},{j}) {} vs {hand}", composite[(i, j)]);
            }
        }
    }

    #[test]
    fn calibration_text_round_trip() {
        let c = parse_calibration(KITTI_CAM, KITTI_VELO, 2).unwrap();
        let (cam, velo) = write_calibration(&c, 3);
        assert_eq!(parse_calibration(&cam, &velo, 3).unwrap(), c);
    }

    #[test]
    fn frustum_filter_cases() {
        let c = CalibrationBundle::pinhole(100.0, 50.0, 40.0).unwrap();
        assert!(filter_to_frustum(&PointCloud::default(), &c, 100, 80, 80.0).is_empty());

        let behind = PointCloud::new(vec![LidarPoint::new(0.0, 0.0, -3.0, 0.0)]);
        assert!(filter_to_frustum(&behind, &c, 100, 80, 80.0).is_empty());

        // (0,0,5) -> (50, 40) inside; (10,0,5) -> u = 250 outside; (0,0,90) beyond max range.
        let cloud = PointCloud::new(vec![
            LidarPoint::new(0.0, 0.0, 5.0, 0.3),
            LidarPoint::new(10.0, 0.0, 5.0, 0.3),
            LidarPoint::new(0.0, 0.0, 90.0, 0.3),
        ]);
        let inside: Vec<bool> = cloud
            .points
            .iter()
            .map(|p| {
                let q = project_point(&p.position().to_homogeneous(), &c).unwrap();
                q.u >= 0.0 && q.u < 100.0 && q.v >= 0.0 && q.v < 80.0 && q.depth <= 80.0
            })
            .collect();
        assert_eq!(inside, vec![true, false, false]);
        assert_eq!(filter_to_frustum(&cloud, &c, 100, 80, 80.0).points, vec![cloud.points[0]]);
    }

    fn arb_point() -> impl Strategy<Value = LidarPoint> {
        (-50f32..50.0, -50f32..50.0, -10f32..90.0, 0f32..1.0).prop_map(|(x, y, z, i)| LidarPoint::new(x, y, z, i))
    }

    proptest! {
        #[test]
        fn velodyne_bytes_round_trip(raw in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 0..64)) {
            let n = raw.len() / 4 * 4;
            let bytes: Vec<u8> = raw[..n].iter().flat_map(|v| v.to_le_bytes()).collect();
            let (cloud, dropped) = read_velodyne_bin(&bytes).unwrap();
            prop_assert_eq!(dropped, 0);
            prop_assert_eq!(write_velodyne_bin(&cloud), bytes);
        }

        #[test]
        fn frustum_filter_is_idempotent_subset(points in proptest::collection::vec(arb_point(), 0..100)) {
            let c = CalibrationBundle::pinhole(60.0, 80.0, 64.0).unwrap();
            let cloud = PointCloud::new(points);
            let once = filter_to_frustum(&cloud, &c, 160, 128, 80.0);
            prop_assert!(once.points.iter().all(|p| cloud.points.contains(p)));
            prop_assert_eq!(filter_to_frustum(&once, &c, 160, 128, 80.0), once);
        }
    }
}
