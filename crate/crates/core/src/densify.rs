//! Dense depth rendering by ray marching a trained occupancy model, plus the
//! direct-projection sparse baseline.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::clustering::quick_means;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{backproject_ray, project_point, CalibrationBundle, Ray};
use crate::hilbert_map::{generate_training_samples, train, OccupancyModel, TrainingReport};
use crate::image::DepthImage;
use crate::pointcloud::{filter_to_frustum, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchParams {
    /// Distance between occupancy probes along the ray, metres.
    pub step: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Occupancy probability at which a probe counts as a collision.
    pub threshold: f64,
    /// Bisection steps between the last free probe and the first occupied one.
    pub refine_iters: u32,
}

impl Default for MarchParams {
    fn default() -> Self {
        Self { step: 0.1, t_min: 1.0, t_max: 80.0, threshold: 0.6, refine_iters: 8 }
    }
}

impl MarchParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.t_min > 0.0
            && self.t_min < self.t_max
            && self.t_max.is_finite()
            && self.threshold > 0.0
            && self.threshold < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid march parameters {self:?}")))
        }
    }
}

/// Entry/exit distances of `ray` through an axis-aligned box.
fn slab_interval(ray: &Ray, lo: &Point3<f64>, hi: &Point3<f64>) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d == 0.0 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Distance along `ray` to the first collision with occupied space.
///
/// Probes `t = t_min + k·step` (the last probe clamped to `t_max`) until the
/// occupancy probability reaches the threshold, then bisects between the last
/// free probe and the first occupied one and returns the midpoint of the final
/// bracket. Probes outside the model's support have probability exactly ½, so
/// for thresholds above ½ the march skips straight to the support box; the
/// probe lattice is unchanged by that.
pub fn ray_depth(ray: &Ray, model: &OccupancyModel, params: &MarchParams) -> Option<f64> {
    let occupied = |t: f64| model.occupancy_probability(&ray.at(t)) >= params.threshold;
    let last = ((params.t_max - params.t_min) / params.step).ceil() as i64;
    let t_at = |k: i64| (params.t_min + k as f64 * params.step).min(params.t_max);

    let (mut k0, mut k1) = (0i64, last);
    if params.threshold > 0.5 {
        match model.support_bounds() {
            Some((lo, hi)) => {
                let (enter, exit) = slab_interval(ray, &lo, &hi)?;
                if exit < params.t_min || enter > params.t_max {
                    return None;
                }
                k0 = (((enter - params.t_min) / params.step).floor() as i64).clamp(0, last);
                k1 = (((exit - params.t_min) / params.step).ceil() as i64).clamp(0, last);
            }
            None if model.is_empty() => return None,
            None => {}
        }
    }

    let mut prev = (k0 > 0).then(|| t_at(k0 - 1));
    for k in k0..=k1 {
        let t = t_at(k);
        if occupied(t) {
            let Some(mut lo) = prev else { return Some(t) };
            let mut hi = t;
            for _ in 0..params.refine_iters {
                let mid = 0.5 * (lo + hi);
                if occupied(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some((0.5 * (lo + hi)).clamp(params.t_min, params.t_max));
        }
        prev = Some(t);
    }
    None
}

/// Renders a depth image of `model` (LiDAR frame) through the camera in `calib`.
///
/// Pixel `(x, y)` is the ray through image coordinates `(x, y)`. Stored depth
/// is the projected third coordinate of the hit point; hits beyond
/// `max_range` and rays without a collision stay invalid.
pub fn render_depth(
    model: &OccupancyModel,
    calib: &CalibrationBundle,
    width: usize,
    height: usize,
    params: &MarchParams,
    max_range: f64,
) -> Result<DepthImage> {
    params.validate()?;
    let to_lidar = *calib.camera_to_lidar();
    let to_camera = *calib.lidar_to_camera();
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let cam_ray = backproject_ray(x as f64, y as f64, calib)?;
                    let ray = cam_ray.transformed(&to_lidar);
                    let depth = ray_depth(&ray, model, params).map_or(DepthImage::INVALID, |t| {
                        let hit = Point3::from_homogeneous(to_camera * ray.at(t).to_homogeneous()).expect("affine");
                        let d = calib.camera_depth(&hit);
                        if d > 0.0 && d <= max_range {
                            d
                        } else {
                            DepthImage::INVALID
                        }
                    });
                    Ok(depth)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DepthImage::from_vec(width, height, rows.concat()))
}

/// Z-buffered direct projection: each in-image point writes its depth to its
/// rounded pixel and the nearest depth wins.
pub fn project_sparse(cloud: &PointCloud, calib: &CalibrationBundle, width: usize, height: usize) -> DepthImage {
    let mut img = DepthImage::new(width, height);
    let (w, h) = (width as f64, height as f64);
    for p in &cloud.points {
        let Some(px) = project_point(&p.position().to_homogeneous(), calib) else { continue };
        if !(px.u >= 0.0 && px.u < w && px.v >= 0.0 && px.v < h) {
            continue;
        }
        let x = (px.u.round() as usize).min(width - 1);
        let y = (px.v.round() as usize).min(height - 1);
        let cur = img.get(x, y);
        if cur == DepthImage::INVALID || px.depth < cur {
            img.set(x, y, px.depth);
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyReport {
    pub in_frustum_points: usize,
    pub clusters: usize,
    pub samples: usize,
    pub training: TrainingReport,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct DensifyOutput {
    pub image: DepthImage,
    pub model: OccupancyModel,
    pub report: DensifyReport,
}

/// Full pipeline: frustum filter, clustering, sample generation, training and per-pixel rendering.
///
/// `calib` must already describe a `width × height` image. The sensor origin
/// for free-space sampling is the LiDAR frame origin.
pub fn densify_depth_image(
    cloud: &PointCloud,
    calib: &CalibrationBundle,
    width: usize,
    height: usize,
    config: &PipelineConfig,
) -> Result<DensifyOutput> {
    config.validate()?;
    let visible = filter_to_frustum(cloud, calib, width, height, config.max_range);
    if visible.is_empty() {
        return Err(Error::NoData);
    }
    let points = visible.positions();
    let seed = config.training.seed;
    let inducing = quick_means(&points, &config.clustering, seed)?;
    let clusters = inducing.len();
    let samples = generate_training_samples(&points, &Point3::origin(), &config.sampling, seed)?;
    let (model, training) = train(&samples, inducing, config.kernel_cutoff(), &config.training)?;
    let image = render_depth(&model, calib, width, height, &config.march, config.max_range)?;
    let valid_fraction = image.valid_count() as f64 / image.len() as f64;
    Ok(DensifyOutput {
        image,
        model,
        report: DensifyReport { in_frustum_points: visible.len(), clusters, samples: samples.len(), training, valid_fraction },
    })
}

/// Occupancy model whose `threshold` level set crosses the optical axis at
/// `depth`: one wide, thin cluster centred `depth + 1` ahead.
#[doc(hidden)]
pub fn plane_crossing_model(depth: f64, threshold: f64) -> OccupancyModel {
    use crate::clustering::{Cluster, InducingSet};
    use crate::hilbert_map::KernelCutoff;
    let sigma = nalgebra::Matrix3::from_diagonal(&Vector3::new(1e4, 1e4, 0.25));
    let k_at_depth = (-0.5_f64 * 1.0 / 0.25).exp();
    let w = (threshold / (1.0 - threshold)).ln() / k_at_depth;
    let cluster = Cluster { mu: Point3::new(0.0, 0.0, depth + 1.0), sigma, count: 1 };
    OccupancyModel::new(InducingSet { clusters: vec![cluster] }, vec![w], KernelCutoff::Fixed(f64::INFINITY))
        .expect("well-conditioned")
}
