//! Continuous occupancy model: kernel logistic regression over Gaussian inducing points.
//!
//! The feature map evaluates a squared-exponential kernel
//! `k(x, Mᵢ) = exp(-½ (x-μᵢ)ᵀ Σᵢ⁻¹ (x-μᵢ))` against every inducing cluster,
//! and the probability that a query is free is `1 / (1 + exp(wᵀΦ(x)))`.
//! Weights minimize the logistic negative log-likelihood plus an elastic-net
//! penalty `λ₁‖w‖₁ + λ₂‖w‖₂²` by seeded mini-batch SGD.
//!
//! Features are sparsified: cluster `i` contributes only when
//! `‖x - μᵢ‖ ≤ cutoff(x)`, and candidates come from a spatial hash grid, so a
//! query touches a handful of clusters instead of the whole set.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::{cluster_radius, Cluster, InducingSet};
use crate::error::{Error, Result};
use crate::grid::SpatialHashGrid;

const MODEL_MAGIC: &[u8; 4] = b"HMOM";
const MODEL_VERSION: u32 = 1;

/// Occupancy label of a training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Free,
    Occupied,
}

impl Label {
    /// `-1` for free space, `+1` for occupied.
    pub fn sign(self) -> f64 {
        match self {
            Label::Free => -1.0,
            Label::Occupied => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub x: Point3<f64>,
    pub y: Label,
}

/// Radius beyond which a cluster's kernel is treated as exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelCutoff {
    /// A constant radius in metres; `f64::INFINITY` gives the dense feature map.
    Fixed(f64),
    /// `scale · τ·(1 + ‖x‖/d₀)`: a multiple of the local cluster radius at the query's range.
    RangeAdaptive { scale: f64, tau: f64, d0: f64 },
}

impl KernelCutoff {
    pub fn radius_at(&self, x: &Point3<f64>) -> f64 {
        match *self {
            KernelCutoff::Fixed(r) => r,
            KernelCutoff::RangeAdaptive { scale, tau, d0 } => scale * cluster_radius(x.coords.norm(), tau, d0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelCutoff::Fixed(r) => r > 0.0,
            KernelCutoff::RangeAdaptive { scale, tau, d0 } => {
                scale > 0.0 && tau > 0.0 && d0 > 0.0 && (scale * tau * d0).is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid kernel cutoff {self:?}")))
        }
    }

    /// Largest `‖x - μ‖` at which a cluster at range `mu_range` can still
    /// contribute, or `None` if unbounded.
    fn reach(&self, mu_range: f64) -> Option<f64> {
        match *self {
            KernelCutoff::Fixed(r) => r.is_finite().then_some(r),
            KernelCutoff::RangeAdaptive { scale, tau, d0 } => {
                // ‖x‖ ≤ ‖μ‖ + c and c = sτ(1 + ‖x‖/d₀) give c ≤ sτ(1 + ‖μ‖/d₀) / (1 - sτ/d₀).
                let k = scale * tau / d0;
                (k < 1.0).then(|| scale * tau * (1.0 + mu_range / d0) / (1.0 - k))
            }
        }
    }
}

/// Flattened per-cluster data for the query hot path.
#[derive(Debug, Clone, Copy)]
struct KernelEntry {
    mu: [f64; 3],
    /// Upper triangle of Σ⁻¹: xx, xy, xz, yy, yz, zz.
    sinv: [f64; 6],
}

impl KernelEntry {
    #[inline]
    fn quad(&self, x: &Point3<f64>) -> (f64, f64) {
        let dx = x.x - self.mu[0];
        let dy = x.y - self.mu[1];
        let dz = x.z - self.mu[2];
        let s = &self.sinv;
        let q = s[0] * dx * dx + s[3] * dy * dy + s[5] * dz * dz + 2.0 * (s[1] * dx * dy + s[2] * dx * dz + s[4] * dy * dz);
        (dx * dx + dy * dy + dz * dz, q)
    }
}

/// Sparse feature vector: `(cluster index, kernel value)` sorted by index.
pub type SparseFeatures = Vec<(u32, f64)>;

#[derive(Debug, Clone)]
pub struct OccupancyModel {
    inducing: InducingSet,
    weights: Vec<f64>,
    cutoff: KernelCutoff,
    sigma_inverses: Vec<Matrix3<f64>>,
    entries: Vec<KernelEntry>,
    grid: Option<SpatialHashGrid>,
    bounds: Option<(Point3<f64>, Point3<f64>)>,
}

impl PartialEq for OccupancyModel {
    fn eq(&self, other: &Self) -> bool {
        self.inducing == other.inducing && self.weights == other.weights && self.cutoff == other.cutoff
    }
}

impl OccupancyModel {
    pub fn new(inducing: InducingSet, weights: Vec<f64>, cutoff: KernelCutoff) -> Result<Self> {
        cutoff.validate()?;
        if weights.len() != inducing.len() {
            return Err(Error::InvalidConfig(format!(
                "{} weights for {} clusters",
                weights.len(),
                inducing.len()
            )));
        }
        let mut sigma_inverses = Vec::with_capacity(inducing.len());
        let mut entries = Vec::with_capacity(inducing.len());
        for (i, c) in inducing.clusters.iter().enumerate() {
            let inv = c
                .sigma
                .try_inverse()
                .filter(|inv| (inv * c.sigma - Matrix3::identity()).abs().max() <= 1e-6)
                .ok_or_else(|| Error::InvalidConfig(format!("covariance of cluster {i} is not invertible")))?;
            let inv = (inv + inv.transpose()) * 0.5;
            entries.push(KernelEntry {
                mu: [c.mu.x, c.mu.y, c.mu.z],
                sinv: [inv[(0, 0)], inv[(0, 1)], inv[(0, 2)], inv[(1, 1)], inv[(1, 2)], inv[(2, 2)]],
            });
            sigma_inverses.push(inv);
        }

        let max_range = inducing.clusters.iter().map(|c| c.mu.coords.norm()).fold(0.0, f64::max);
        let grid_cell = match cutoff {
            KernelCutoff::Fixed(r) => r.is_finite().then_some(r),
            KernelCutoff::RangeAdaptive { .. } if !inducing.is_empty() => {
                let mut ranges: Vec<f64> = inducing.clusters.iter().map(|c| c.mu.coords.norm()).collect();
                let mid = ranges.len() / 2;
                let median = *ranges.select_nth_unstable_by(mid, f64::total_cmp).1;
                Some(cutoff.radius_at(&Point3::new(median, 0.0, 0.0)))
            }
            KernelCutoff::RangeAdaptive { .. } => None,
        };
        let grid = grid_cell.map(|cell| {
            let mut g = SpatialHashGrid::new(cell);
            for (i, c) in inducing.clusters.iter().enumerate() {
                g.insert(&c.mu, i as u32);
            }
            g
        });
        let bounds = match (cutoff.reach(max_range), inducing.is_empty()) {
            (Some(reach), false) => {
                let mut lo = Point3::from(Vector3::repeat(f64::INFINITY));
                let mut hi = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
                for c in &inducing.clusters {
                    lo = lo.inf(&c.mu);
                    hi = hi.sup(&c.mu);
                }
                let pad = Vector3::repeat(reach);
                Some((lo - pad, hi + pad))
            }
            _ => None,
        };

        Ok(Self { inducing, weights, cutoff, sigma_inverses, entries, grid, bounds })
    }

    /// All-zero weights: every query has probability ½.
    pub fn untrained(inducing: InducingSet, cutoff: KernelCutoff) -> Result<Self> {
        let n = inducing.len();
        Self::new(inducing, vec![0.0; n], cutoff)
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cutoff(&self) -> KernelCutoff {
        self.cutoff
    }

    pub fn sigma_inverses(&self) -> &[Matrix3<f64>] {
        &self.sigma_inverses
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Axis-aligned box outside of which every feature is zero, if bounded.
    pub fn support_bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        self.bounds
    }

    #[inline]
    fn for_each_feature(&self, x: &Point3<f64>, mut visit: impl FnMut(u32, f64)) {
        let r = self.cutoff.radius_at(x);
        let r2 = r * r;
        let eval = |i: u32| {
            let (d2, q) = self.entries[i as usize].quad(x);
            if d2 <= r2 {
                visit(i, (-0.5 * q).exp());
            }
        };
        match &self.grid {
            Some(grid) => grid.for_each_candidate(x, r, eval),
            None => (0..self.entries.len() as u32).for_each(eval),
        }
    }

    /// `wᵀΦ(x)`.
    pub fn score(&self, x: &Point3<f64>) -> f64 {
        let mut s = 0.0;
        self.for_each_feature(x, |i, k| s += self.weights[i as usize] * k);
        s
    }

    pub fn occupancy_probability(&self, x: &Point3<f64>) -> f64 {
        1.0 - nonoccupancy_probability(x, self)
    }

    /// Serializes to the versioned little-endian `HMOM` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.len() * 112);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let (kind, params) = match self.cutoff {
            KernelCutoff::Fixed(r) => (0u8, [r, 0.0, 0.0]),
            KernelCutoff::RangeAdaptive { scale, tau, d0 } => (1u8, [scale, tau, d0]),
        };
        out.push(kind);
        params.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (c, w) in self.inducing.clusters.iter().zip(&self.weights) {
            c.mu.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            c.sigma.transpose().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            out.extend_from_slice(&(c.count as u64).to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let kind = r.take(1)?[0];
        let p = [r.f64()?, r.f64()?, r.f64()?];
        let cutoff = match kind {
            0 => KernelCutoff::Fixed(p[0]),
            1 => KernelCutoff::RangeAdaptive { scale: p[0], tau: p[1], d0: p[2] },
            k => return Err(Error::ModelFormat(format!("unknown cutoff kind {k}"))),
        };
        let n = r.u64()? as usize;
        if n > bytes.len() / 112 {
            return Err(Error::ModelFormat(format!("cluster count {n} exceeds container size")));
        }
        let mut clusters = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let mu = Point3::new(r.f64()?, r.f64()?, r.f64()?);
            let mut s = [0.0; 9];
            for v in &mut s {
                *v = r.f64()?;
            }
            let count = r.u64()? as usize;
            clusters.push(Cluster { mu, sigma: Matrix3::from_row_slice(&s), count });
            weights.push(r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::new(InducingSet { clusters }, weights, cutoff)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| Error::ModelFormat("truncated container".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Squared-exponential kernel against a cluster given its precision matrix.
pub fn kernel(x: &Point3<f64>, mu: &Point3<f64>, sigma_inverse: &Matrix3<f64>) -> f64 {
    let d = x - mu;
    (-0.5 * d.dot(&(sigma_inverse * d))).exp()
}

pub fn feature_vector(x: &Point3<f64>, model: &OccupancyModel) -> SparseFeatures {
    let mut f = SparseFeatures::new();
    model.for_each_feature(x, |i, k| f.push((i, k)));
    f.sort_unstable_by_key(|&(i, _)| i);
    f
}

/// Expands a sparse feature vector to its dense form.
pub fn dense(features: &SparseFeatures, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &(i, v) in features {
        out[i as usize] = v;
    }
    out
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Probability that `x` is free: `1 / (1 + exp(wᵀΦ(x)))`.
pub fn nonoccupancy_probability(x: &Point3<f64>, model: &OccupancyModel) -> f64 {
    1.0 / (1.0 + model.score(x).exp())
}

fn dot(w: &[f64], f: &SparseFeatures) -> f64 {
    f.iter().map(|&(i, v)| w[i as usize] * v).sum()
}

fn elastic_net(w: &[f64], l1: f64, l2: f64) -> f64 {
    l1 * w.iter().map(|v| v.abs()).sum::<f64>() + l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// `Σ log(1 + exp(-yᵢ wᵀΦᵢ)) + λ₁‖w‖₁ + λ₂‖w‖₂²`.
pub fn nll_loss(w: &[f64], samples: &[LabeledSample], features: &[SparseFeatures], l1_weight: f64, l2_weight: f64) -> f64 {
    assert_eq!(samples.len(), features.len(), "features must align with samples");
    let data: f64 = samples.iter().zip(features).map(|(s, f)| softplus(-s.y.sign() * dot(w, f))).sum();
    data + elastic_net(w, l1_weight, l2_weight)
}

/// Gradient of [`nll_loss`]; the ℓ₁ subgradient at `wᵢ = 0` is taken as 0.
pub fn nll_gradient(
    w: &[f64],
    samples: &[LabeledSample],
    features: &[SparseFeatures],
    l1_weight: f64,
    l2_weight: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for (s, f) in samples.iter().zip(features) {
        accumulate_sample_gradient(&mut g, w, s, f);
    }
    for (gi, &wi) in g.iter_mut().zip(w) {
        *gi += l1_weight * l1_subgradient(wi) + 2.0 * l2_weight * wi;
    }
    g
}

#[inline]
fn accumulate_sample_gradient(g: &mut [f64], w: &[f64], s: &LabeledSample, f: &SparseFeatures) {
    let y = s.y.sign();
    let coeff = -y * logistic(-y * dot(w, f));
    for &(i, v) in f {
        g[i as usize] += coeff * v;
    }
}

fn l1_subgradient(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 10, batch_size: 256, l1_weight: 1e-4, l2_weight: 1e-4, seed: 0 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.l1_weight >= 0.0 && self.l2_weight >= 0.0) {
            return Err(Error::InvalidConfig("elastic-net weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Full-dataset loss at `w = 0`, i.e. `N·ln 2`.
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Fits the weights by mini-batch SGD starting from `w = 0`.
///
/// Each step follows the summed data gradient of the batch plus the
/// elastic-net gradient scaled by `batch / N`, so one epoch applies the
/// penalty once in total. Batches are drawn from a seeded shuffle per epoch.
pub fn train(
    samples: &[LabeledSample],
    inducing: InducingSet,
    cutoff: KernelCutoff,
    config: &TrainingConfig,
) -> Result<(OccupancyModel, TrainingReport)> {
    config.validate()?;
    if !samples.iter().any(|s| s.y == Label::Occupied) || !samples.iter().any(|s| s.y == Label::Free) {
        return Err(Error::DegenerateTraining("training needs both occupied and free samples"));
    }
    let model = OccupancyModel::untrained(inducing, cutoff)?;
    let features: Vec<SparseFeatures> = samples.par_iter().map(|s| feature_vector(&s.x, &model)).collect();
    let n = samples.len();
    let mut w = vec![0.0; model.len()];
    let initial_loss = nll_loss(&w, samples, &features, config.l1_weight, config.l2_weight);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; w.len()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                accumulate_sample_gradient(&mut grad, &w, &samples[i], &features[i]);
            }
            let share = batch.len() as f64 / n as f64;
            for (wi, gi) in w.iter_mut().zip(&grad) {
                let reg = share * (config.l1_weight * l1_subgradient(*wi) + 2.0 * config.l2_weight * *wi);
                *wi -= config.learning_rate * (gi + reg);
            }
        }
        epoch_losses.push(nll_loss(&w, samples, &features, config.l1_weight, config.l2_weight));
    }

    let OccupancyModel { inducing, cutoff, .. } = model;
    let trained = OccupancyModel::new(inducing, w, cutoff)?;
    Ok((trained, TrainingReport { initial_loss, epoch_losses }))
}

/// Placement of free-space samples along each beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Distance between consecutive free samples, metres.
    pub free_spacing: f64,
    /// First free sample sits this far from the sensor.
    pub near_margin: f64,
    /// No free sample closer than this to the endpoint.
    pub far_margin: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { free_spacing: 2.0, near_margin: 1.0, far_margin: 0.5 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.free_spacing > 0.0 && self.near_margin > 0.0 && self.far_margin > 0.0) {
            return Err(Error::InvalidConfig(format!("sampling distances must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One occupied sample per endpoint plus free samples along each beam, returned in a seeded shuffled order.
pub fn generate_training_samples(
    endpoints: &[Point3<f64>],
    sensor_origin: &Point3<f64>,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    sampling.validate()?;
    let mut out = Vec::with_capacity(endpoints.len() * 4);
    for p in endpoints {
        out.push(LabeledSample { x: *p, y: Label::Occupied });
        let v = p - sensor_origin;
        let length = v.norm();
        if length == 0.0 {
            continue;
        }
        let dir = v / length;
        let stop = length - sampling.far_margin;
        for k in 0.. {
            let s = sampling.near_margin + k as f64 * sampling.free_spacing;
            if s > stop {
                break;
            }
            out.push(LabeledSample { x: sensor_origin + dir * s, y: Label::Free });
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Fraction of samples whose label matches the model's decision.
///
/// A point is predicted occupied iff its occupancy probability is strictly
/// above ½, so points outside every kernel's support count as free.
pub fn classification_accuracy(model: &OccupancyModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("labelled samples"));
    }
    let correct = samples
        .par_iter()
        .filter(|s| (model.occupancy_probability(&s.x) > 0.5) == (s.y == Label::Occupied))
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
