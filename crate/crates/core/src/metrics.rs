//! Depth-evaluation metrics, crop and prediction upsampling.
//!
//! Over the `T` pixels with `0 < y* ≤ cap`, with predictions `y` clamped to
//! `[0.001, cap]`:
//!
//! | metric   | value                                   |
//! |----------|-----------------------------------------|
//! | abs_rel  | `(1/T) Σ |y - y*| / y*`                 |
//! | sq_rel   | `(1/T) Σ (y - y*)² / y*`                |
//! | rmse     | `sqrt((1/T) Σ (y - y*)²)`               |
//! | rmse_log | `sqrt((1/T) Σ (ln y - ln y*)²)`         |
//! | δₖ       | fraction with `max(y/y*, y*/y) < 1.25ᵏ` |
//!
//! [`MetricsReport`] keeps the raw sums so reports from several images can be
//! pooled exactly.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::DepthImage;

/// Lower clamp for predictions, keeps `ln y` finite.
pub const PREDICTION_FLOOR: f64 = 1e-3;

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

/// Fractional crop bounds `(top, bottom, left, right)` of the Garg crop.
pub const GARG_CROP: (f64, f64, f64, f64) = (0.40810811, 0.99189189, 0.03594771, 0.96405229);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Sums {
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    sq_log: f64,
    within: [u64; 3],
    count: u64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.abs_rel += o.abs_rel;
        self.sq_rel += o.sq_rel;
        self.sq += o.sq;
        self.sq_log += o.sq_log;
        for k in 0..3 {
            self.within[k] += o.within[k];
        }
        self.count += o.count;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_count: u64,
    pub cap: f64,
    sums: Sums,
}

impl MetricsReport {
    fn from_sums(sums: Sums, cap: f64) -> Self {
        let t = sums.count as f64;
        Self {
            abs_rel: sums.abs_rel / t,
            sq_rel: sums.sq_rel / t,
            rmse: (sums.sq / t).sqrt(),
            rmse_log: (sums.sq_log / t).sqrt(),
            delta1: sums.within[0] as f64 / t,
            delta2: sums.within[1] as f64 / t,
            delta3: sums.within[2] as f64 / t,
            valid_count: sums.count,
            cap,
            sums,
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("valid_count", self.valid_count as f64),
            ("cap", self.cap),
        ]
    }

    /// One-line JSON object, optionally tagged with a name.
    pub fn to_json(&self, name: Option<&str>) -> String {
        let mut parts = Vec::with_capacity(10);
        if let Some(n) = name {
            parts.push(format!("\"name\":\"{}\"", n.replace('\\', "\\\\").replace('"', "\\\"")));
        }
        for (k, v) in self.fields() {
            parts.push(if k == "valid_count" { format!("\"{k}\":{}", self.valid_count) } else { format!("\"{k}\":{v}") });
        }
        format!("{{{}}}", parts.join(","))
    }
}

/// Multi-line `key=value` record.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.fields() {
            if k == "valid_count" {
                writeln!(f, "{k}={}", self.valid_count)?;
            } else {
                writeln!(f, "{k}={v}")?;
            }
        }
        Ok(())
    }
}

pub fn eval_metrics(pred: &DepthImage, gt: &DepthImage, cap: f64) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        let ((pw, ph), (gw, gh)) = (pred.dims(), gt.dims());
        return Err(Error::ShapeMismatch(pw, ph, gw, gh));
    }
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::InvalidConfig(format!("cap must be > 0, got {cap}")));
    }
    let mut s = Sums::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(g > 0.0 && g <= cap) {
            continue;
        }
        let y = p.clamp(PREDICTION_FLOOR, cap);
        let diff = y - g;
        s.abs_rel += diff.abs() / g;
        s.sq_rel += diff * diff / g;
        s.sq += diff * diff;
        let dl = y.ln() - g.ln();
        s.sq_log += dl * dl;
        let ratio = (y / g).max(g / y);
        for (k, thr) in DELTA_THRESHOLDS.iter().enumerate() {
            if ratio < *thr {
                s.within[k] += 1;
            }
        }
        s.count += 1;
    }
    if s.count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(MetricsReport::from_sums(s, cap))
}

/// Pixel-pooled metrics over all reports, as if every image were evaluated at once.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or(Error::EmptyInput("metrics reports"))?;
    let mut s = Sums::default();
    for r in reports {
        if r.cap != first.cap {
            return Err(Error::Protocol(format!("cannot pool reports with caps {} and {}", first.cap, r.cap)));
        }
        s.add(&r.sums);
    }
    Ok(MetricsReport::from_sums(s, first.cap))
}

/// Unweighted mean of per-image metrics; the alternative to pixel pooling.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let pooled = aggregate_reports(reports)?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        abs_rel: mean(|r| r.abs_rel),
        sq_rel: mean(|r| r.sq_rel),
        rmse: mean(|r| r.rmse),
        rmse_log: mean(|r| r.rmse_log),
        delta1: mean(|r| r.delta1),
        delta2: mean(|r| r.delta2),
        delta3: mean(|r| r.delta3),
        ..pooled
    })
}

/// Pixel bounds `(row0, row1, col0, col1)` of the Garg crop, half-open.
pub fn central_crop_bounds(width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (t, b, l, r) = GARG_CROP;
    let h = height as f64;
    let w = width as f64;
    ((t * h).floor() as usize, (b * h).floor() as usize, (l * w).floor() as usize, (r * w).floor() as usize)
}

pub fn central_crop(img: &DepthImage) -> DepthImage {
    let (r0, r1, c0, c1) = central_crop_bounds(img.width(), img.height());
    let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
    for y in r0..r1 {
        data.extend_from_slice(&img.data()[y * img.width() + c0..y * img.width() + c1]);
    }
    DepthImage::from_vec(c1 - c0, r1 - r0, data)
}

/// Corner-aligned source coordinate of target index `i`.
fn source_coord(i: usize, target: usize, source: usize) -> f64 {
    if target <= 1 || source <= 1 {
        0.0
    } else {
        i as f64 * (source - 1) as f64 / (target - 1) as f64
    }
}

/// Bilinear resize with corner-aligned sampling.
///
/// A target pixel is invalid if any source neighbour that carries nonzero
/// weight is invalid. At exact lattice positions that is the single
/// coincident pixel, so a same-size resize is the identity.
pub fn bilinear_resize(img: &DepthImage, new_width: usize, new_height: usize) -> DepthImage {
    let (w, h) = img.dims();
    let mut out = DepthImage::new(new_width, new_height);
    if w == 0 || h == 0 {
        return out;
    }
    for ty in 0..new_height {
        let sy = source_coord(ty, new_height, h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for tx in 0..new_width {
            let sx = source_coord(tx, new_width, w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x1, y0, fx * (1.0 - fy)),
                (x0, y1, (1.0 - fx) * fy),
                (x1, y1, fx * fy),
            ];
            let mut acc = 0.0;
            let mut valid = true;
            for (x, y, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let v = img.get(x, y);
                if v <= 0.0 {
                    valid = false;
                    break;
                }
                acc += wgt * v;
            }
            if valid {
                out.set(tx, ty, acc);
            }
        }
    }
    out
}
