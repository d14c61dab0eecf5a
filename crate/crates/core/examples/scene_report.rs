//! Densifies a built-in synthetic scene, compares it with the analytic depth
//! and reports held-out occupancy classification accuracy.
//!
//! `cargo run --release --example scene_report -- [wall10|street-mock] [seed] [focal]`

use std::time::Instant;

use hmdepth_core::io_depth::valid_fraction;
use hmdepth_core::synthetic::desk_calibration;
use hmdepth_core::{
    analytic_depth, classification_accuracy, densify_depth_image, generate_training_samples, project_sparse, quick_means,
    simulate_scan, train, PipelineConfig, Scene,
};

fn main() -> hmdepth_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "wall10".into());
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let focal: f64 = args.next().map_or(300.0, |f| f.parse().expect("focal length"));
    let (w, h) = (160, 128);
    let mut config = PipelineConfig::default();
    config.training.seed = seed;

    let scene = Scene::named(&name)?;
    let calib = desk_calibration(w, h, focal)?;
    let cloud = simulate_scan(&scene, &scene.scan, seed)?;
    let truth = analytic_depth(&scene, &calib, w, h)?;
    let sparse = project_sparse(&cloud, &calib, w, h);

    let start = Instant::now();
    let out = densify_depth_image(&cloud, &calib, w, h, &config)?;
    let elapsed = start.elapsed().as_secs_f64();

    let (mut sq, mut n, mut covered, mut surface) = (0.0, 0usize, 0usize, 0usize);
    for (d, t) in out.image.data().iter().zip(truth.data()) {
        if *t > 0.0 {
            surface += 1;
            covered += (*d > 0.0) as usize;
            if *d > 0.0 {
                sq += (d - t) * (d - t);
                n += 1;
            }
        }
    }
    println!("scene={name} points={} clusters={} samples={}", cloud.len(), out.report.clusters, out.report.samples);
    println!("sparse_valid={:.4} dense_valid={:.4}", valid_fraction(&sparse), out.report.valid_fraction);
    println!(
        "surface_coverage={:.4} rmse={:.4} seconds={elapsed:.2}",
        covered as f64 / surface.max(1) as f64,
        (sq / n.max(1) as f64).sqrt()
    );

    // Whole scan, 80/20 split of the shuffled samples.
    let points = cloud.positions();
    let samples = generate_training_samples(&points, &nalgebra::Point3::origin(), &config.sampling, seed)?;
    let cut = samples.len() * 4 / 5;
    let inducing = quick_means(&points, &config.clustering, seed)?;
    let (model, _) = train(&samples[..cut], inducing, config.kernel_cutoff(), &config.training)?;
    println!("heldout_accuracy={:.4}", classification_accuracy(&model, &samples[cut..])?);
    Ok(())
}
