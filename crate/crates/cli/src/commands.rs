use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hmdepth_core::config::Resolution;
use hmdepth_core::io_depth::{downsample, render_colormap, Downsample};
use hmdepth_core::metrics::average_reports;
use hmdepth_core::pointcloud::write_calibration;
use hmdepth_core::synthetic::desk_calibration;
use hmdepth_core::{
    aggregate_reports, analytic_depth, bilinear_resize, central_crop, densify_depth_image, eval_metrics,
    filter_to_frustum, parse_calibration, project_sparse, read_depth_png, read_velodyne_bin, simulate_scan,
    valid_fraction, write_depth_png, write_velodyne_bin, CalibrationBundle, MetricsReport, PipelineConfig, PointCloud,
    Scene,
};
use rayon::prelude::*;

use crate::summary::Summary;
use crate::{summary_path, Crop, Downsampling, ReportFormat, ScanInputs, Settings};

fn load_scan(path: &Path) -> Result<(PointCloud, usize)> {
    let bytes = std::fs::read(path).with_context(|| format!("scan: cannot read {}", path.display()))?;
    read_velodyne_bin(&bytes).with_context(|| format!("scan: {}", path.display()))
}

/// Parses the calibration pair and rescales it from the native to the output resolution.
fn load_calibration(inputs: &ScanInputs, cfg: &PipelineConfig) -> Result<CalibrationBundle> {
    let read = |p: &PathBuf| std::fs::read_to_string(p).with_context(|| format!("calibration: cannot read {}", p.display()));
    let cam = read(&inputs.calib_cam)?;
    let velo = read(&inputs.calib_velo)?;
    let calib = parse_calibration(&cam, &velo, cfg.camera_index).with_context(|| {
        format!("calibration: {} + {}", inputs.calib_cam.display(), inputs.calib_velo.display())
    })?;
    let (native, out) = (cfg.native_resolution, cfg.output_resolution());
    if native == out {
        return Ok(calib);
    }
    let sx = out.width as f64 / native.width as f64;
    let sy = out.height as f64 / native.height as f64;
    calib.scaled(sx, sy).context("calibration: rescaling to the output resolution")
}

fn write_outputs(image: &hmdepth_core::DepthImage, png: &Path, summary: &Summary) -> Result<()> {
    if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("output: cannot create {}", dir.display()))?;
    }
    write_depth_png(image, png).with_context(|| format!("output: cannot write {}", png.display()))?;
    let side = summary_path(png);
    std::fs::write(&side, summary.to_text()).with_context(|| format!("output: cannot write {}", side.display()))
}

/// Densifies one scan; writes the depth PNG and its summary sidecar.
pub fn cmd_densify(inputs: &ScanInputs, settings: &Settings, png: &Path) -> Result<Summary> {
    let start = Instant::now();
    let cfg = settings.resolve()?;
    let (cloud, dropped) = load_scan(&inputs.scan)?;
    let calib = load_calibration(inputs, &cfg)?;
    let res = cfg.output_resolution();
    let out = densify_depth_image(&cloud, &calib, res.width, res.height, &cfg)
        .with_context(|| format!("densify: {}", inputs.scan.display()))?;

    let mut s = Summary::default();
    s.push("command", "densify");
    s.push("scan", inputs.scan.display());
    s.push("points", cloud.len());
    s.push("dropped_points", dropped);
    s.push("in_frustum_points", out.report.in_frustum_points);
    s.push("clusters", out.report.clusters);
    s.push("samples", out.report.samples);
    s.push("initial_loss", out.report.training.initial_loss);
    s.push("final_loss", out.report.training.final_loss());
    s.push("width", res.width);
    s.push("height", res.height);
    s.push("valid_fraction", out.report.valid_fraction);
    s.push("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    s.push_config(&cfg.to_text());
    write_outputs(&out.image, png, &s)?;
    Ok(s)
}

/// Direct z-buffered projection of one scan.
pub fn cmd_sparse_project(inputs: &ScanInputs, settings: &Settings, png: &Path) -> Result<Summary> {
    let start = Instant::now();
    let cfg = settings.resolve()?;
    let (cloud, dropped) = load_scan(&inputs.scan)?;
    let calib = load_calibration(inputs, &cfg)?;
    let res = cfg.output_resolution();
    let visible = filter_to_frustum(&cloud, &calib, res.width, res.height, cfg.max_range);
    let image = project_sparse(&visible, &calib, res.width, res.height);

    let mut s = Summary::default();
    s.push("command", "sparse-project");
    s.push("scan", inputs.scan.display());
    s.push("points", cloud.len());
    s.push("dropped_points", dropped);
    s.push("in_frustum_points", visible.len());
    s.push("width", res.width);
    s.push("height", res.height);
    s.push("valid_fraction", valid_fraction(&image));
    s.push("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    s.push_config(&cfg.to_text());
    write_outputs(&image, png, &s)?;
    Ok(s)
}

/// Sorted names of the `.png` files directly inside `dir`.
fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn record_line(label: &str, r: &MetricsReport) -> String {
    let mut line = label.to_string();
    for (k, v) in r.fields() {
        if k == "valid_count" {
            line.push_str(&format!(" {k}={}", r.valid_count));
        } else {
            line.push_str(&format!(" {k}={v}"));
        }
    }
    line
}

/// Metrics for one prediction/ground-truth pair.
pub fn evaluate_pair(pred: &Path, gt: &Path, cap: f64, crop: Crop) -> Result<MetricsReport> {
    let gt_img = read_depth_png(gt).with_context(|| format!("ground truth {}", gt.display()))?;
    let mut pred_img = read_depth_png(pred).with_context(|| format!("prediction {}", pred.display()))?;
    if pred_img.dims() != gt_img.dims() {
        pred_img = bilinear_resize(&pred_img, gt_img.width(), gt_img.height());
    }
    let (p, g) = match crop {
        Crop::Garg => (central_crop(&pred_img), central_crop(&gt_img)),
        Crop::None => (pred_img, gt_img),
    };
    Ok(eval_metrics(&p, &g, cap)?)
}

/// Evaluates every prediction against the ground truth of the same name.
pub fn cmd_evaluate(
    pred_dir: &Path,
    gt_dir: &Path,
    cap: f64,
    crop: Crop,
    per_image_mean: bool,
    format: ReportFormat,
    out: &mut dyn Write,
) -> Result<Vec<(String, MetricsReport)>> {
    let pred = png_names(pred_dir).context("evaluate: predictions")?;
    let gt = png_names(gt_dir).context("evaluate: ground truth")?;
    let (ps, gs): (BTreeSet<_>, BTreeSet<_>) = (pred.iter().collect(), gt.iter().collect());
    let missing_gt: Vec<&str> = ps.difference(&gs).map(|s| s.as_str()).collect();
    let missing_pred: Vec<&str> = gs.difference(&ps).map(|s| s.as_str()).collect();
    if !missing_gt.is_empty() || !missing_pred.is_empty() {
        bail!(
            "evaluate: file sets differ; without ground truth: [{}]; without prediction: [{}]",
            missing_gt.join(", "),
            missing_pred.join(", ")
        );
    }
    if pred.is_empty() {
        bail!("evaluate: no PNG files in {}", pred_dir.display());
    }
    let reports: Vec<(String, MetricsReport)> = pred
        .par_iter()
        .map(|name| {
            let r = evaluate_pair(&pred_dir.join(name), &gt_dir.join(name), cap, crop)
                .with_context(|| format!("evaluate: {name}"))?;
            Ok((name.clone(), r))
        })
        .collect::<Result<_>>()?;
    let all: Vec<MetricsReport> = reports.iter().map(|(_, r)| *r).collect();
    let total = if per_image_mean { average_reports(&all) } else { aggregate_reports(&all) }.context("evaluate")?;
    let total_label = if per_image_mean { "mean" } else { "pooled" };
    for (name, r) in &reports {
        match format {
            ReportFormat::Text => writeln!(out, "{}", record_line(&format!("image={name}"), r))?,
            ReportFormat::Json => writeln!(out, "{}", r.to_json(Some(name)))?,
        }
    }
    match format {
        ReportFormat::Text => writeln!(out, "{}", record_line(&format!("{total_label} images={}", reports.len()), &total))?,
        ReportFormat::Json => writeln!(out, "{}", total.to_json(Some(&format!("<{total_label}>"))))?,
    }
    Ok(reports)
}

/// Per-file and average valid fractions, optionally also after downsampling.
pub fn cmd_stats(
    dir: &Path,
    target: Option<Resolution>,
    mode: Downsampling,
    render: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(f64, Option<f64>)> {
    let names = png_names(dir).context("stats")?;
    if names.is_empty() {
        bail!("stats: no PNG files in {}", dir.display());
    }
    if let Some(r) = render {
        std::fs::create_dir_all(r).with_context(|| format!("stats: cannot create {}", r.display()))?;
    }
    let mode = match mode {
        Downsampling::Nearest => Downsample::Nearest,
        Downsampling::Any => Downsample::AnyValid,
    };
    let rows: Vec<(String, f64, Option<f64>)> = names
        .par_iter()
        .map(|name| {
            let img = read_depth_png(dir.join(name)).with_context(|| format!("stats: {name}"))?;
            let small = target.map(|t| valid_fraction(&downsample(&img, t.width, t.height, mode)));
            if let Some(r) = render {
                let max = img.data().iter().cloned().fold(0.0, f64::max).max(1.0);
                let bytes = render_colormap(&img, max).with_context(|| format!("stats: render {name}"))?;
                std::fs::write(r.join(name), bytes).with_context(|| format!("stats: cannot write render of {name}"))?;
            }
            Ok((name.clone(), valid_fraction(&img), small))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_small = target.map(|_| rows.iter().filter_map(|r| r.2).sum::<f64>() / n);
    for (name, f, small) in &rows {
        match small {
            Some(s) => writeln!(out, "file={name} valid_fraction={f:.6} downsampled_valid_fraction={s:.6}")?,
            None => writeln!(out, "file={name} valid_fraction={f:.6}")?,
        }
    }
    match (target, mean_small) {
        (Some(t), Some(s)) => {
            writeln!(out, "average files={} valid_fraction={mean:.6} downsampled_valid_fraction={s:.6} downsampled_to={t}", rows.len())?
        }
        _ => writeln!(out, "average files={} valid_fraction={mean:.6}", rows.len())?,
    }
    Ok((mean, mean_small))
}

/// File names written by [`cmd_synth`].
pub mod synth_files {
    pub const SCAN: &str = "scan.bin";
    pub const CALIB_CAM: &str = "calib_cam_to_cam.txt";
    pub const CALIB_VELO: &str = "calib_velo_to_cam.txt";
    pub const CONFIG: &str = "hmdepth.conf";
    pub const TRUTH: &str = "truth.png";
}

/// Writes a synthetic scene's scan, KITTI-style calibration, a config whose
/// native resolution matches the camera, and the analytic depth image.
pub fn cmd_synth(
    scene_name: &str,
    out_dir: &Path,
    width: usize,
    height: usize,
    focal: f64,
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<()> {
    let scene = Scene::named(scene_name).context("synth")?;
    let seed = settings.seed.unwrap_or(0);
    let camera = settings.camera.unwrap_or(PipelineConfig::default().camera_index);
    let calib = desk_calibration(width, height, focal).context("synth: camera")?;
    let cloud = simulate_scan(&scene, &scene.scan, seed).context("synth: scan")?;
    let truth = analytic_depth(&scene, &calib, width, height).context("synth: ground truth")?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("synth: cannot create {}", out_dir.display()))?;

    let (cam, velo) = write_calibration(&calib, camera);
    let mut cfg = PipelineConfig { native_resolution: Resolution::new(width, height), camera_index: camera, ..Default::default() };
    cfg.training.seed = seed;
    let files: [(&str, Vec<u8>); 4] = [
        (synth_files::SCAN, write_velodyne_bin(&cloud)),
        (synth_files::CALIB_CAM, cam.into_bytes()),
        (synth_files::CALIB_VELO, velo.into_bytes()),
        (synth_files::CONFIG, cfg.to_text().into_bytes()),
    ];
    for (name, bytes) in files {
        let p = out_dir.join(name);
        std::fs::write(&p, bytes).with_context(|| format!("synth: cannot write {}", p.display()))?;
    }
    let truth_path = out_dir.join(synth_files::TRUTH);
    write_depth_png(&truth, &truth_path).with_context(|| format!("synth: cannot write {}", truth_path.display()))?;
    writeln!(out, "scene={} points={} width={width} height={height} dir={}", scene.name, cloud.len(), out_dir.display())?;
    Ok(())
}
