//! Command implementations behind the `hmdepth` binary.
//!
//! Every command writes its human-readable report to the supplied writer and
//! returns an error whose outermost context names the failing stage, so the
//! binary can print a one-line diagnostic and exit nonzero.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hmdepth_core::config::Resolution;
use hmdepth_core::PipelineConfig;

pub mod commands;
pub mod summary;

pub use commands::{cmd_densify, cmd_evaluate, cmd_sparse_project, cmd_stats, cmd_synth};

#[derive(Debug, Parser)]
#[command(name = "hmdepth", version, about = "Dense depth images from LiDAR scans via continuous occupancy maps")]
pub struct Cli {
    #[command(flatten)]
    pub settings: Settings,

    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Options shared by every command that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    /// Flat `key = value` configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Camera whose `P_rect_0N` is used; overrides `camera_index`.
    #[arg(long, global = true)]
    pub camera: Option<u32>,
    /// Output size as WIDTHxHEIGHT; overrides `resolution`. For `stats`, the
    /// size of the extra downsampled column.
    #[arg(long, global = true)]
    pub resolution: Option<Resolution>,
}

impl Settings {
    /// Defaults, then the config file, then command-line overrides.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
                PipelineConfig::from_text(&text).with_context(|| format!("config: {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        if let Some(camera) = self.camera {
            cfg.camera_index = camera;
        }
        if let Some(r) = self.resolution {
            cfg.resolution = Some(r);
        }
        cfg.validate().context("config")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScanInputs {
    /// Velodyne scan, packed little-endian float32 (x, y, z, intensity) records.
    #[arg(long)]
    pub scan: PathBuf,
    /// KITTI `calib_cam_to_cam.txt`.
    #[arg(long)]
    pub calib_cam: PathBuf,
    /// KITTI `calib_velo_to_cam.txt`.
    #[arg(long)]
    pub calib_velo: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Crop {
    Garg,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cap {
    #[value(name = "50")]
    Fifty,
    #[value(name = "80")]
    Eighty,
}

impl Cap {
    pub fn metres(self) -> f64 {
        match self {
            Cap::Fifty => 50.0,
            Cap::Eighty => 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Downsampling {
    /// Copy the source pixel nearest each target pixel centre.
    Nearest,
    /// Valid if any source pixel in the footprint is valid.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an occupancy model on one scan and render a dense depth PNG.
    Densify {
        #[command(flatten)]
        inputs: ScanInputs,
        /// Output depth PNG; the run summary goes next to it as `<stem>.summary.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a scan straight into the image (the sparse baseline).
    SparseProject {
        #[command(flatten)]
        inputs: ScanInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted depth PNGs with ground truth, paired by file name.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "80")]
        cap: Cap,
        #[arg(long, value_enum, default_value = "garg")]
        crop: Crop,
        /// Average per-image metrics instead of pooling pixels.
        #[arg(long)]
        per_image_mean: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Valid-pixel fractions of every depth PNG in a directory.
    Stats {
        dir: PathBuf,
        /// How maps are reduced when `--resolution` asks for a second column.
        #[arg(long, value_enum, default_value = "nearest")]
        downsample: Downsampling,
        /// Write a colour-mapped copy of each map into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Write a built-in synthetic scene as scan, calibration, config and ground truth.
    Synth {
        #[arg(long, default_value = "wall10")]
        scene: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 300.0)]
        focal: f64,
    },
}

/// Runs a parsed command line, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if cli.print_config {
        let cfg = cli.settings.resolve()?;
        out.write_all(cfg.to_text().as_bytes())?;
        return Ok(());
    }
    let Some(command) = &cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::Densify { inputs, out: png } => {
            let summary = cmd_densify(inputs, &cli.settings, png)?;
            writeln!(out, "{}", summary.to_text().trim_end())?;
        }
        Command::SparseProject { inputs, out: png } => {
            let summary = cmd_sparse_project(inputs, &cli.settings, png)?;
            writeln!(out, "{}", summary.to_text().trim_end())?;
        }
        Command::Evaluate { pred, gt, cap, crop, per_image_mean, format } => {
            cmd_evaluate(pred, gt, cap.metres(), *crop, *per_image_mean, *format, out)?;
        }
        Command::Stats { dir, downsample, render } => {
            cmd_stats(dir, cli.settings.resolution, *downsample, render.as_deref(), out)?;
        }
        Command::Synth { scene, out_dir, width, height, focal } => {
            cmd_synth(scene, out_dir, *width, *height, *focal, &cli.settings, out)?;
        }
    }
    Ok(())
}

/// `<dir>/<stem>.summary.txt` next to an output image.
pub fn summary_path(image: &Path) -> PathBuf {
    image.with_extension("summary.txt")
}
