//! Distance-adaptive Quick-Means clustering into Gaussian inducing points.
//!
//! Cluster size grows with range from the sensor, `r(d) = τ·(1 + d/d₀)`, so
//! sparse far-field returns still get clusters wide enough to interpolate
//! across the gaps between scan lines.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::SpatialHashGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Radius scale τ in metres.
    pub tau: f64,
    /// Range d₀ at which the radius doubles, in metres.
    pub d0: f64,
    /// Isotropic covariance floor ε in m².
    pub epsilon: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { tau: 0.3, d0: 20.0, epsilon: 1e-3 }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.d0 > 0.0 && self.epsilon > 0.0) || !(self.tau * self.d0 * self.epsilon).is_finite() {
            return Err(Error::InvalidConfig(format!(
                "clustering needs tau > 0, d0 > 0, epsilon > 0 (got {}, {}, {})",
                self.tau, self.d0, self.epsilon
            )));
        }
        Ok(())
    }

    pub fn radius(&self, d: f64) -> f64 {
        cluster_radius(d, self.tau, self.d0)
    }
}

/// `τ·(1 + d/d₀)`.
pub fn cluster_radius(d: f64, tau: f64, d0: f64) -> f64 {
    tau * (1.0 + d / d0)
}

/// A Gaussian inducing point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub mu: Point3<f64>,
    pub sigma: Matrix3<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InducingSet {
    pub clusters: Vec<Cluster>,
}

impl InducingSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Mean and regularized sample covariance (`/ max(n-1, 1)`, plus `ε·I`).
pub fn cluster_moments(points: &[Point3<f64>], epsilon: f64) -> (Point3<f64>, Matrix3<f64>) {
    assert!(!points.is_empty(), "cluster_moments needs at least one point");
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut sigma = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        sigma += d * d.transpose();
    }
    sigma /= (points.len().saturating_sub(1)).max(1) as f64;
    // Exact symmetry regardless of accumulation order.
    sigma = (sigma + sigma.transpose()) * 0.5;
    sigma += Matrix3::identity() * epsilon;
    (Point3::from(mean), sigma)
}

/// Clusters `points` and returns the inducing set.
pub fn quick_means(points: &[Point3<f64>], params: &ClusterParams, seed: u64) -> Result<InducingSet> {
    quick_means_assign(points, params, seed).map(|(set, _)| set)
}

/// Like [`quick_means`], also returning the cluster index of every input point.
///
/// One greedy pass over the points in a seeded shuffled order: each point
/// joins the earliest-founded cluster whose founding centre lies within
/// `r(‖p‖)` of it, otherwise it founds a new cluster at itself. Moments are
/// computed from the members afterwards.
pub fn quick_means_assign(points: &[Point3<f64>], params: &ClusterParams, seed: u64) -> Result<(InducingSet, Vec<usize>)> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyInput("quick_means needs at least one point"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut ranges: Vec<f64> = points.iter().map(|p| p.coords.norm()).collect();
    let mid = ranges.len() / 2;
    let median_range = *ranges.select_nth_unstable_by(mid, f64::total_cmp).1;
    let mut grid = SpatialHashGrid::new(params.radius(median_range));

    let mut centers: Vec<Point3<f64>> = Vec::new();
    let mut assignment = vec![0usize; points.len()];
    for &i in &order {
        let p = &points[i];
        let r = params.radius(p.coords.norm());
        let mut best: Option<u32> = None;
        grid.for_each_candidate(p, r, |c| {
            if best.is_none_or(|b| c < b) && (centers[c as usize] - p).norm() <= r {
                best = Some(c);
            }
        });
        assignment[i] = match best {
            Some(c) => c as usize,
            None => {
                let id = centers.len();
                grid.insert(p, id as u32);
                centers.push(*p);
                id
            }
        };
    }

    let mut members: Vec<Vec<Point3<f64>>> = vec![Vec::new(); centers.len()];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(points[i]);
    }
    let clusters = members
        .iter()
        .map(|m| {
            let (mu, sigma) = cluster_moments(m, params.epsilon);
            Cluster { mu, sigma, count: m.len() }
        })
        .collect();
    Ok((InducingSet { clusters }, assignment))
}
