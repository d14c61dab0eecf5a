//! Analytic scenes and a simulated multi-beam LiDAR for ground-truth tests.
//!
//! Scenes live in the LiDAR frame (x forward, y left, z up) and are built
//! from bounded rectangles and spheres, so every ray has an exact first hit.
//! A scene file is flat `key = value` text:
//!
//! ```text
//! name = wall10
//! # centre, normal, half extents along u = normalize(z × n) and v = n × u
//! plane = 10 0 0  -1 0 0  6 5
//! sphere = 12 -3 -0.8  0.9
//! beams = 64
//! elevation = -14 14       # degrees, lowest and highest beam
//! azimuth = -20 20         # degrees, positive to the left
//! azimuth_steps = 68
//! noise = 0                # range noise sigma, metres
//! max_range = 120
//! ```

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{backproject_ray, CalibrationBundle};
use crate::image::DepthImage;
use crate::pointcloud::{LidarPoint, PointCloud};

const HIT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Rectangle centred at `center` with unit `normal`.
    Plane { center: Point3<f64>, normal: Vector3<f64>, half_width: f64, half_height: f64 },
    Sphere { center: Point3<f64>, radius: f64 },
}

impl Primitive {
    /// In-plane axes `(u, v)` of a plane with normal `n`.
    pub fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let u = Vector3::z().cross(n);
        let u = if u.norm() < 1e-12 { Vector3::x() } else { u.normalize() };
        (u, n.cross(&u))
    }

    /// Smallest `t > 0` with `origin + t·dir` on the surface; `dir` must be unit length.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Plane { center, normal, half_width, half_height } => {
                let denom = dir.dot(&normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (center - origin).dot(&normal) / denom;
                if t <= HIT_EPSILON {
                    return None;
                }
                let rel = origin + dir * t - center;
                let (u, v) = Self::plane_basis(&normal);
                (rel.dot(&u).abs() <= half_width && rel.dot(&v).abs() <= half_height).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > HIT_EPSILON)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Plane { center, normal, half_width, half_height } => {
                center.iter().all(|v| v.is_finite())
                    && (normal.norm() - 1.0).abs() < 1e-9
                    && *half_width > 0.0
                    && *half_height > 0.0
            }
            Primitive::Sphere { center, radius } => center.iter().all(|v| v.is_finite()) && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("degenerate primitive {self:?}")))
        }
    }
}

/// Angular sampling of a spinning multi-beam sensor at the LiDAR origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPattern {
    pub beams: usize,
    /// Lowest and highest beam elevation, degrees.
    pub elevation: (f64, f64),
    /// Azimuth sweep, degrees, positive towards +y.
    pub azimuth: (f64, f64),
    pub azimuth_steps: usize,
    /// Standard deviation of Gaussian range noise, metres.
    pub noise_sigma: f64,
    pub max_range: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            beams: 64,
            elevation: (-24.9, 2.0),
            azimuth: (-45.0, 45.0),
            azimuth_steps: 512,
            noise_sigma: 0.0,
            max_range: 120.0,
        }
    }
}

fn lerp_deg(range: (f64, f64), i: usize, n: usize) -> f64 {
    let f = if n <= 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    (range.0 + f * (range.1 - range.0)).to_radians()
}

impl ScanPattern {
    /// Unit beam directions, beam-major.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let mut dirs = Vec::with_capacity(self.beams * self.azimuth_steps);
        for b in 0..self.beams {
            let el = lerp_deg(self.elevation, b, self.beams);
            for a in 0..self.azimuth_steps {
                let az = lerp_deg(self.azimuth, a, self.azimuth_steps);
                dirs.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        dirs
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    /// Scan pattern that ships with the scene.
    pub scan: ScanPattern,
}

const WALL10: &str = include_str!("../scenes/wall10.scene");
const STREET_MOCK: &str = include_str!("../scenes/street-mock.scene");

fn floats(line: usize, value: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Scene { line, reason: format!("expected numbers, got {value:?}") })?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Scene { line, reason: format!("expected {n} finite values, got {value:?}") });
    }
    Ok(v)
}

impl Scene {
    /// One of the built-in scenes, `wall10` or `street-mock`.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "wall10" => Self::parse(WALL10),
            "street-mock" => Self::parse(STREET_MOCK),
            other => Err(Error::InvalidConfig(format!("unknown scene {other:?}"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut scene = Scene::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Scene { line, reason: "expected `key = value`".into() })?;
            let count = |v: &str| {
                v.parse::<usize>().map_err(|_| Error::Scene { line, reason: format!("expected a count, got {v:?}") })
            };
            match key {
                "name" => scene.name = value.to_string(),
                "plane" => {
                    let v = floats(line, value, 8)?;
                    let n = Vector3::new(v[3], v[4], v[5]);
                    if n.norm() == 0.0 {
                        return Err(Error::Scene { line, reason: "zero plane normal".into() });
                    }
                    scene.primitives.push(Primitive::Plane {
                        center: Point3::new(v[0], v[1], v[2]),
                        normal: n.normalize(),
                        half_width: v[6],
                        half_height: v[7],
                    });
                }
                "sphere" => {
                    let v = floats(line, value, 4)?;
                    scene.primitives.push(Primitive::Sphere { center: Point3::new(v[0], v[1], v[2]), radius: v[3] });
                }
                "beams" => scene.scan.beams = count(value)?,
                "azimuth_steps" => scene.scan.azimuth_steps = count(value)?,
                "elevation" => {
                    let v = floats(line, value, 2)?;
                    scene.scan.elevation = (v[0], v[1]);
                }
                "azimuth" => {
                    let v = floats(line, value, 2)?;
                    scene.scan.azimuth = (v[0], v[1]);
                }
                "noise" => scene.scan.noise_sigma = floats(line, value, 1)?[0],
                "max_range" => scene.scan.max_range = floats(line, value, 1)?[0],
                other => return Err(Error::Scene { line, reason: format!("unknown key {other:?}") }),
            }
            if let Some(p) = scene.primitives.last() {
                p.validate().map_err(|e| Error::Scene { line, reason: e.to_string() })?;
            }
        }
        if scene.scan.noise_sigma < 0.0 || scene.scan.max_range <= 0.0 {
            return Err(Error::Scene { line: 0, reason: "noise must be ≥ 0 and max_range > 0".into() });
        }
        Ok(scene)
    }

    /// Nearest hit distance along a unit-direction ray.
    pub fn first_hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.primitives.iter().filter_map(|p| p.intersect(origin, dir)).min_by(f64::total_cmp)
    }
}

/// Casts every beam of `pattern` from the LiDAR origin and keeps the first
/// hit within `max_range`. Range noise, when enabled, is drawn from a
/// generator seeded with `seed`.
pub fn simulate_scan(scene: &Scene, pattern: &ScanPattern, seed: u64) -> Result<PointCloud> {
    let noise = if pattern.noise_sigma > 0.0 {
        Some(Normal::new(0.0, pattern.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Point3::origin();
    let mut points = Vec::new();
    for dir in pattern.directions() {
        let Some(mut r) = scene.first_hit(&origin, &dir) else { continue };
        if r > pattern.max_range {
            continue;
        }
        if let Some(n) = &noise {
            r = (r + n.sample(&mut rng)).max(HIT_EPSILON);
        }
        let p = dir * r;
        points.push(LidarPoint::new(p.x as f32, p.y as f32, p.z as f32, 0.5));
    }
    Ok(PointCloud::new(points))
}

/// Exact depth image of the scene: each pixel's ray is intersected with every
/// primitive and the nearest hit's projected depth is stored.
pub fn analytic_depth(scene: &Scene, calib: &CalibrationBundle, width: usize, height: usize) -> Result<DepthImage> {
    let to_lidar = *calib.camera_to_lidar();
    let to_camera = *calib.lidar_to_camera();
    let mut img = DepthImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let ray = backproject_ray(x as f64, y as f64, calib)?.transformed(&to_lidar);
            if let Some(t) = scene.first_hit(&ray.origin, &ray.direction) {
                let hit = to_camera * ray.at(t).to_homogeneous();
                img.set(x, y, calib.camera_depth(&Point3::new(hit.x, hit.y, hit.z)));
            }
        }
    }
    Ok(img)
}

/// Pinhole camera at the LiDAR origin looking along +x, with the usual
/// camera axes (x right, y down, z forward) and the principal point at the
/// image centre.
pub fn desk_calibration(width: usize, height: usize, focal: f64) -> Result<CalibrationBundle> {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    #[rustfmt::skip]
    let p = Matrix3x4::new(
        focal, 0.0, cx, 0.0,
        0.0, focal, cy, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    #[rustfmt::skip]
    let axes = Matrix4::new(
        0.0, -1.0, 0.0, 0.0,
        0.0, 0.0, -1.0, 0.0,
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    CalibrationBundle::new(p, Matrix3::identity(), axes)
}
