//! Depth-map training losses over the pixels where the reference is valid.
//!
//! All three losses are means over the `n` valid reference pixels:
//!
//! * MSE: `(1/n) Σ (yᵢ - yᵢ*)²`.
//! * Scale-invariant (Eigen): with `dᵢ = ln yᵢ - ln yᵢ*`,
//!   `(1/n) Σ dᵢ² - (λ/n²) (Σ dᵢ)² + (1/n) Σ [(∇ₓd)ᵢ² + (∇ᵧd)ᵢ²]`, where the
//!   spatial gradients are forward differences taken only where both pixels
//!   are valid.
//! * Adaptive BerHu: `c = max|xᵢ| / 5`, `|x|` below `c` and `(x² + c²) / 2c` above.
//!
//! Gradients are with respect to the prediction; BerHu's `c` is held constant.

use crate::error::{Error, Result};
use crate::image::DepthImage;

/// Prediction and reference of equal size. Valid pixels are those where the reference is valid.
#[derive(Debug, Clone, Copy)]
pub struct DepthPair<'a> {
    pub prediction: &'a DepthImage,
    pub ground_truth: &'a DepthImage,
}

impl<'a> DepthPair<'a> {
    pub fn new(prediction: &'a DepthImage, ground_truth: &'a DepthImage) -> Result<Self> {
        let (pw, ph) = prediction.dims();
        let (gw, gh) = ground_truth.dims();
        if (pw, ph) != (gw, gh) {
            return Err(Error::ShapeMismatch(pw, ph, gw, gh));
        }
        Ok(Self { prediction, ground_truth })
    }

    fn mask(&self) -> impl Iterator<Item = usize> + '_ {
        self.ground_truth.data().iter().enumerate().filter(|(_, &g)| g > 0.0).map(|(i, _)| i)
    }

    fn residuals(&self) -> Result<Vec<(usize, f64)>> {
        let p = self.prediction.data();
        let g = self.ground_truth.data();
        let r: Vec<(usize, f64)> = self.mask().map(|i| (i, p[i] - g[i])).collect();
        if r.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    Eigen { lambda: f64 },
    Berhu,
}

pub fn loss_mse(pair: &DepthPair) -> Result<f64> {
    let r = pair.residuals()?;
    Ok(r.iter().map(|(_, x)| x * x).sum::<f64>() / r.len() as f64)
}

/// Log-difference map over valid pixels (`None` elsewhere).
fn log_diff(pair: &DepthPair) -> Result<(Vec<Option<f64>>, usize)> {
    let p = pair.prediction.data();
    let g = pair.ground_truth.data();
    let mut d = vec![None; g.len()];
    let mut n = 0;
    for i in pair.mask() {
        if p[i] <= 0.0 {
            return Err(Error::Domain(format!("non-positive prediction {} at valid pixel {i}", p[i])));
        }
        d[i] = Some(p[i].ln() - g[i].ln());
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((d, n))
}

/// Forward-difference neighbour pairs `(i, j)` with both pixels valid.
fn gradient_pairs(d: &[Option<f64>], width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..height).flat_map(move |y| {
        (0..width).flat_map(move |x| {
            let i = y * width + x;
            let right = (x + 1 < width).then(|| i + 1);
            let down = (y + 1 < height).then(|| i + width);
            [right, down].into_iter().flatten().filter(move |&j| d[i].is_some() && d[j].is_some()).map(move |j| (i, j))
        })
    })
}

pub fn loss_eigen(pair: &DepthPair, lambda: f64) -> Result<f64> {
    let (d, n) = log_diff(pair)?;
    let n = n as f64;
    let (w, h) = pair.ground_truth.dims();
    let sum: f64 = d.iter().flatten().sum();
    let sum_sq: f64 = d.iter().flatten().map(|v| v * v).sum();
    let grad_sq: f64 = gradient_pairs(&d, w, h)
        .map(|(i, j)| {
            let g = d[j].unwrap() - d[i].unwrap();
            g * g
        })
        .sum();
    Ok(sum_sq / n - lambda / (n * n) * sum * sum + grad_sq / n)
}

/// Per-pixel BerHu penalty for threshold `c > 0`.
pub fn berhu_term(x: f64, c: f64) -> f64 {
    if x.abs() <= c {
        x.abs()
    } else {
        (x * x + c * c) / (2.0 * c)
    }
}

fn berhu_threshold(r: &[(usize, f64)]) -> f64 {
    r.iter().map(|(_, x)| x.abs()).fold(0.0, f64::max) / 5.0
}

pub fn loss_berhu(pair: &DepthPair) -> Result<f64> {
    let r = pair.residuals()?;
    let c = berhu_threshold(&r);
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(r.iter().map(|&(_, x)| berhu_term(x, c)).sum::<f64>() / r.len() as f64)
}

pub fn loss_value(kind: LossKind, pair: &DepthPair) -> Result<f64> {
    match kind {
        LossKind::Mse => loss_mse(pair),
        LossKind::Eigen { lambda } => loss_eigen(pair, lambda),
        LossKind::Berhu => loss_berhu(pair),
    }
}

/// Gradient of the chosen loss with respect to every prediction pixel; zero off the mask.
pub fn loss_gradient(kind: LossKind, pair: &DepthPair) -> Result<DepthGradient> {
    let (w, h) = pair.ground_truth.dims();
    let mut grad = vec![0.0; w * h];
    match kind {
        LossKind::Mse => {
            let r = pair.residuals()?;
            let n = r.len() as f64;
            for (i, x) in r {
                grad[i] = 2.0 * x / n;
            }
        }
        LossKind::Berhu => {
            let r = pair.residuals()?;
            let n = r.len() as f64;
            let c = berhu_threshold(&r);
            if c > 0.0 {
                for (i, x) in r {
                    grad[i] = if x.abs() <= c { x.signum() / n } else { x / (c * n) };
                }
            }
        }
        LossKind::Eigen { lambda } => {
            let (d, n) = log_diff(pair)?;
            let n = n as f64;
            let sum: f64 = d.iter().flatten().sum();
            // ∂L/∂dᵢ, then chain through dᵢ = ln yᵢ - ln yᵢ*.
            let mut dl_dd = vec![0.0; d.len()];
            for (i, di) in d.iter().enumerate() {
                if let Some(di) = di {
                    dl_dd[i] = 2.0 * di / n - 2.0 * lambda * sum / (n * n);
                }
            }
            for (i, j) in gradient_pairs(&d, w, h) {
                let g = d[j].unwrap() - d[i].unwrap();
                dl_dd[j] += 2.0 * g / n;
                dl_dd[i] -= 2.0 * g / n;
            }
            let p = pair.prediction.data();
            for (i, di) in d.iter().enumerate() {
                if di.is_some() {
                    grad[i] = dl_dd[i] / p[i];
                }
            }
        }
    }
    Ok(DepthGradient { width: w, height: h, values: grad })
}

/// Row-major gradient map aligned with the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGradient {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, v: &[f64]) -> DepthImage {
        DepthImage::from_vec(w, h, v.to_vec())
    }

    #[test]
    fn mse_cases() {
        let g = img(2, 2, &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(loss_mse(&DepthPair::new(&g, &g).unwrap()).unwrap(), 0.0);
        // residuals 3 and 4 on the two valid pixels, a huge residual on the invalid one
        let g = img(3, 1, &[1.0, 2.0, 0.0]);
        let p = img(3, 1, &[4.0, 6.0, 100.0]);
        assert_abs_diff_eq!(loss_mse(&DepthPair::new(&p, &g).unwrap()).unwrap(), 12.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        let g = DepthImage::new(2, 2);
        let pair = DepthPair::new(&g, &g).unwrap();
        assert!(matches!(loss_mse(&pair), Err(Error::EmptyMask)));
        assert!(matches!(loss_berhu(&pair), Err(Error::EmptyMask)));
        assert!(matches!(loss_eigen(&pair, 0.5), Err(Error::EmptyMask)));
        assert!(matches!(DepthPair::new(&g, &DepthImage::new(3, 2)), Err(Error::ShapeMismatch(..))));
    }

    #[test]
    fn eigen_domain_error() {
        let g = img(2, 1, &[1.0, 2.0]);
        let p = img(2, 1, &[1.0, 0.0]);
        assert!(matches!(loss_eigen(&DepthPair::new(&p, &g).unwrap(), 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn eigen_two_pixel_value() {
        // d = (ln 2, 0): scalar evaluation of each term.
        let l2 = 2f64.ln();
        let mean_sq = (l2 * l2 + 0.0) / 2.0;
        let mean_term = 0.5 / 4.0 * (l2 + 0.0).powi(2);
        let grad_term = (0.0 - l2).powi(2) / 2.0;
        let expected = mean_sq - mean_term + grad_term;
        let g = img(2, 1, &[3.0, 5.0]);
        let p = img(2, 1, &[6.0, 5.0]);
        let v = loss_eigen(&DepthPair::new(&p, &g).unwrap(), 0.5).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.875 * l2 * l2, epsilon = 1e-15);
    }

    #[test]
    fn eigen_scale_invariance_at_lambda_one() {
        let g = img(3, 2, &[1.0, 4.0, 9.0, 0.0, 2.5, 7.0]);
        for c in [0.5, 2.0, 10.0] {
            let p = img(3, 2, &g.data().iter().map(|v| v * c).collect::<Vec<_>>());
            assert!(loss_eigen(&DepthPair::new(&p, &g).unwrap(), 1.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn berhu_cases() {
        let g = img(2, 1, &[5.0, 5.0]);
        assert_eq!(loss_berhu(&DepthPair::new(&g, &g).unwrap()).unwrap(), 0.0);
        // residuals (1, 10): c = 2 → terms 1 and (100 + 4)/4 = 26
        let p = img(2, 1, &[6.0, 15.0]);
        assert_abs_diff_eq!(loss_berhu(&DepthPair::new(&p, &g).unwrap()).unwrap(), 13.5, epsilon = 1e-15);
        for c in [0.1, 1.0, 7.5] {
            assert_abs_diff_eq!(berhu_term(c, c), c, epsilon = 1e-15);
            assert_abs_diff_eq!(berhu_term(c * (1.0 + 1e-12), c), c, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_masking_and_mse_closed_form() {
        let g = img(3, 1, &[1.0, 2.0, 0.0]);
        let same = DepthPair::new(&g, &g).unwrap();
        assert!(loss_gradient(LossKind::Mse, &same).unwrap().values.iter().all(|&v| v == 0.0));
        let p = img(3, 1, &[4.0, 6.0, 100.0]);
        let pair = DepthPair::new(&p, &g).unwrap();
        assert_eq!(loss_gradient(LossKind::Mse, &pair).unwrap().values, vec![3.0, 4.0, 0.0]);
        for kind in [LossKind::Berhu, LossKind::Eigen { lambda: 0.5 }] {
            assert_eq!(loss_gradient(kind, &pair).unwrap().values[2], 0.0);
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_zero_at_reference(
            vals in proptest::collection::vec(prop_oneof![Just(0.0), 0.5f64..80.0], 12),
            noise in proptest::collection::vec(0.2f64..5.0, 12),
            lambda in 0.0f64..=1.0,
        ) {
            let g = img(4, 3, &vals);
            prop_assume!(g.valid_count() > 0);
            let p = img(4, 3, &vals.iter().zip(&noise).map(|(v, k)| if *v > 0.0 { v * k } else { 1.0 }).collect::<Vec<_>>());
            let same = DepthPair::new(&g, &g).unwrap();
            let pair = DepthPair::new(&p, &g).unwrap();
            prop_assert_eq!(loss_mse(&same).unwrap(), 0.0);
            prop_assert_eq!(loss_eigen(&same, lambda).unwrap(), 0.0);
            prop_assert_eq!(loss_berhu(&same).unwrap(), 0.0);
            prop_assert!(loss_mse(&pair).unwrap() >= 0.0);
            prop_assert!(loss_eigen(&pair, lambda).unwrap() >= -1e-12);
            prop_assert!(loss_berhu(&pair).unwrap() >= 0.0);
        }

        #[test]
        fn gradients_match_central_differences(
            gt in proptest::collection::vec(prop_oneof![1 => Just(0.0), 4 => 1.0f64..60.0], 20),
            scale in proptest::collection::vec(0.5f64..2.0, 20),
            lambda in 0.0f64..=1.0,
            probe in 0usize..20,
        ) {
            let g = img(5, 4, &gt);
            prop_assume!(g.data()[probe] > 0.0);
            let base: Vec<f64> = gt.iter().zip(&scale).map(|(v, s)| if *v > 0.0 { v * s } else { 3.0 }).collect();
            let p = img(5, 4, &base);
            let pair = DepthPair::new(&p, &g).unwrap();
            for kind in [LossKind::Mse, LossKind::Eigen { lambda }, LossKind::Berhu] {
                if kind == LossKind::Berhu {
                    // c is frozen analytically; stay clear of the kink and of the maximum residual that sets c
                    let r: Vec<f64> = g.data().iter().zip(&base).filter(|(g, _)| **g > 0.0).map(|(g, p)| (p - g).abs()).collect();
                    let c = r.iter().cloned().fold(0.0, f64::max) / 5.0;
                    let x = (base[probe] - gt[probe]).abs();
                    let h = 1e-5 * base[probe];
                    prop_assume!((x - c).abs() > 2.0 * h && (x - 5.0 * c).abs() > 2.0 * h);
                }
                let analytic = loss_gradient(kind, &pair).unwrap().values[probe];
                let h = 1e-5 * base[probe];
                let eval = |delta: f64| {
                    let mut v = base.clone();
                    v[probe] += delta;
                    let q = img(5, 4, &v);
                    loss_value(kind, &DepthPair::new(&q, &g).unwrap()).unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                prop_assert!((analytic - numeric).abs() / denom < 1e-5, "{kind:?}: analytic {analytic} numeric {numeric}");
            }
        }

        #[test]
        fn berhu_term_monotone(a in 0.0f64..20.0, b in 0.0f64..20.0, c in 0.01f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(berhu_term(lo, c) <= berhu_term(hi, c));
            prop_assert_eq!(berhu_term(-lo, c), berhu_term(lo, c));
        }
    }
}
