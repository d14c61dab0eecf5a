//! Pipeline configuration as a flat `key = value` document.
//!
//! ```text
//! # comments and blank lines are ignored
//! tau = 0.3
//! resolution = 160x128
//! ```
//!
//! Unknown keys and malformed values are errors. [`PipelineConfig::to_text`]
//! prints every key, and parsing that text gives back the same config.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::clustering::ClusterParams;
use crate::densify::MarchParams;
use crate::error::{Error, Result};
use crate::hilbert_map::{KernelCutoff, SamplingConfig, TrainingConfig};

/// Image size as `width × height` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("resolution {s:?} is not WIDTHxHEIGHT"));
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Self { width, height })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub clustering: ClusterParams,
    /// Kernel cutoff as a multiple of the local cluster radius.
    pub cutoff_scale: f64,
    pub sampling: SamplingConfig,
    pub training: TrainingConfig,
    pub march: MarchParams,
    /// Selects `P_rect_0N` from the camera calibration.
    pub camera_index: u32,
    /// Frustum depth limit and largest valid output depth, metres.
    pub max_range: f64,
    /// Size of the image `P_rect` was calibrated for.
    pub native_resolution: Resolution,
    /// Rendered size; `None` renders at the native size.
    pub resolution: Option<Resolution>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clustering: ClusterParams::default(),
            cutoff_scale: 3.0,
            sampling: SamplingConfig::default(),
            training: TrainingConfig::default(),
            march: MarchParams::default(),
            camera_index: 2,
            max_range: 80.0,
            native_resolution: Resolution::new(1242, 375),
            resolution: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub fn kernel_cutoff(&self) -> KernelCutoff {
        KernelCutoff::RangeAdaptive { scale: self.cutoff_scale, tau: self.clustering.tau, d0: self.clustering.d0 }
    }

    pub fn output_resolution(&self) -> Resolution {
        self.resolution.unwrap_or(self.native_resolution)
    }

    pub fn validate(&self) -> Result<()> {
        self.clustering.validate()?;
        self.sampling.validate()?;
        self.training.validate()?;
        self.march.validate()?;
        self.kernel_cutoff_valid()?;
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::InvalidConfig(format!("max_range must be > 0, got {}", self.max_range)));
        }
        Ok(())
    }

    fn kernel_cutoff_valid(&self) -> Result<()> {
        if self.cutoff_scale > 0.0 && self.cutoff_scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cutoff_scale must be > 0, got {}", self.cutoff_scale)))
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "tau" => self.clustering.tau = parse(key, v)?,
            "d0" => self.clustering.d0 = parse(key, v)?,
            "epsilon" => self.clustering.epsilon = parse(key, v)?,
            "cutoff_scale" => self.cutoff_scale = parse(key, v)?,
            "free_spacing" => self.sampling.free_spacing = parse(key, v)?,
            "near_margin" => self.sampling.near_margin = parse(key, v)?,
            "far_margin" => self.sampling.far_margin = parse(key, v)?,
            "learning_rate" => self.training.learning_rate = parse(key, v)?,
            "epochs" => self.training.epochs = parse(key, v)?,
            "batch_size" => self.training.batch_size = parse(key, v)?,
            "l1_weight" => self.training.l1_weight = parse(key, v)?,
            "l2_weight" => self.training.l2_weight = parse(key, v)?,
            "seed" => self.training.seed = parse(key, v)?,
            "march_step" => self.march.step = parse(key, v)?,
            "t_min" => self.march.t_min = parse(key, v)?,
            "t_max" => self.march.t_max = parse(key, v)?,
            "threshold" => self.march.threshold = parse(key, v)?,
            "refine_iters" => self.march.refine_iters = parse(key, v)?,
            "camera_index" => self.camera_index = parse(key, v)?,
            "max_range" => self.max_range = parse(key, v)?,
            "native_resolution" => self.native_resolution = v.parse()?,
            "resolution" => self.resolution = if v == "native" { None } else { Some(v.parse()?) },
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a document over the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k, v).map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("tau", &self.clustering.tau);
        kv("d0", &self.clustering.d0);
        kv("epsilon", &self.clustering.epsilon);
        kv("cutoff_scale", &self.cutoff_scale);
        kv("free_spacing", &self.sampling.free_spacing);
        kv("near_margin", &self.sampling.near_margin);
        kv("far_margin", &self.sampling.far_margin);
        kv("learning_rate", &self.training.learning_rate);
        kv("epochs", &self.training.epochs);
        kv("batch_size", &self.training.batch_size);
        kv("l1_weight", &self.training.l1_weight);
        kv("l2_weight", &self.training.l2_weight);
        kv("seed", &self.training.seed);
        kv("march_step", &self.march.step);
        kv("t_min", &self.march.t_min);
        kv("t_max", &self.march.t_max);
        kv("threshold", &self.march.threshold);
        kv("refine_iters", &self.march.refine_iters);
        kv("camera_index", &self.camera_index);
        kv("max_range", &self.max_range);
        kv("native_resolution", &self.native_resolution);
        match self.resolution {
            Some(r) => kv("resolution", &r),
            None => kv("resolution", &"native"),
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        cfg.resolution = Some(Resolution::new(160, 128));
        cfg.training.l1_weight = 0.1 + 0.2;
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn pinned_defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.clustering.tau, c.clustering.d0, c.clustering.epsilon), (0.3, 20.0, 1e-3));
        assert_eq!(c.cutoff_scale, 3.0);
        assert_eq!((c.training.learning_rate, c.training.epochs, c.training.batch_size), (0.1, 10, 256));
        assert_eq!((c.training.l1_weight, c.training.l2_weight), (1e-4, 1e-4));
        assert_eq!((c.march.step, c.march.t_min, c.march.t_max, c.march.threshold, c.march.refine_iters), (0.1, 1.0, 80.0, 0.6, 8));
        assert_eq!(c.max_range, 80.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(PipelineConfig::from_text("tau = 0.2\nfoo = 1\n").unwrap_err().to_string().contains("foo"));
        assert!(PipelineConfig::from_text("epochs = ten").is_err());
        assert!(PipelineConfig::from_text("epochs = 0").is_err());
        assert!(PipelineConfig::from_text("threshold = 1.5").is_err());
        assert!(PipelineConfig::from_text("resolution = 160").is_err());
        assert!(PipelineConfig::from_text("just words").is_err());
    }

    #[test]
    fn comments_and_resolution() {
        let c = PipelineConfig::from_text("# desk run\nresolution = 160x128  # small\n\nseed=7").unwrap();
        assert_eq!(c.output_resolution(), Resolution::new(160, 128));
        assert_eq!(c.training.seed, 7);
    }
}
