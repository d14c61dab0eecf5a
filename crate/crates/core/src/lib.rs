//! Depth densification with continuous occupancy maps.
//!
//! A raw LiDAR scan is clustered into a set of Gaussian inducing points, a
//! kernel logistic-regression occupancy model is trained over them, and a
//! dense depth image is rendered by marching every pixel ray through the
//! model until it collides with occupied space. The crate also carries the
//! depth-map losses (MSE, scale-invariant, adaptive BerHu) with analytic
//! gradients, the standard depth-evaluation metrics, and KITTI-style file
//! I/O for scans, calibration and 16-bit depth PNGs.
//!
//! The typical flow:
//!
//! ```no_run
//! use hmdepth_core::{densify_depth_image, parse_calibration, read_velodyne_bin, PipelineConfig};
//!
//! # fn main() -> hmdepth_core::Result<()> {
//! let (cloud, _dropped) = read_velodyne_bin(&std::fs::read("scan.bin")?)?;
//! let calib = parse_calibration(
//!     &std::fs::read_to_string("calib_cam_to_cam.txt")?,
//!     &std::fs::read_to_string("calib_velo_to_cam.txt")?,
//!     2,
//! )?;
//! let config = PipelineConfig::default();
//! let out = densify_depth_image(&cloud, &calib, 1242, 375, &config)?;
//! println!("valid fraction {:.4}", out.report.valid_fraction);
//! # Ok(())
//! # }
//! ```

pub mod clustering;
pub mod config;
pub mod densify;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod hilbert_map;
pub mod image;
pub mod io_depth;
pub mod losses;
pub mod metrics;
pub mod pointcloud;
pub mod synthetic;

pub use clustering::{cluster_moments, cluster_radius, quick_means, Cluster, ClusterParams, InducingSet};
pub use config::PipelineConfig;
pub use densify::{densify_depth_image, project_sparse, ray_depth, render_depth, DensifyOutput, DensifyReport, MarchParams};
pub use error::{Error, Result};
pub use geometry::{backproject_ray, project_point, CalibrationBundle, Pixel, Ray};
pub use hilbert_map::{
    classification_accuracy, feature_vector, generate_training_samples, kernel, nll_loss, nonoccupancy_probability, train, KernelCutoff,
    Label, LabeledSample, OccupancyModel, SamplingConfig, TrainingConfig, TrainingReport,
};
pub use image::DepthImage;
pub use io_depth::{read_depth_png, valid_fraction, write_depth_png, DepthPngCodec};
pub use losses::{loss_berhu, loss_eigen, loss_gradient, loss_mse, loss_value, DepthGradient, DepthPair, LossKind};
pub use metrics::{aggregate_reports, bilinear_resize, central_crop, eval_metrics, MetricsReport};
pub use pointcloud::{filter_to_frustum, parse_calibration, read_velodyne_bin, write_velodyne_bin, LidarPoint, PointCloud};
pub use synthetic::{analytic_depth, simulate_scan, Primitive, ScanPattern, Scene};
