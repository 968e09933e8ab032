//! Subcommand implementations. This is the only place that touches the
//! filesystem directly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use nalgebra::Vector3;
use spadsplat::camera::{CameraIntrinsics, CameraPose, CameraView};
use spadsplat::gaussian::{GaussianCloud, GrayRadiance};
use spadsplat::image::{ColorImage, GrayImage};
use spadsplat::io::manifest::PoseEntry;
use spadsplat::io::{
    load_checkpoint, load_color, load_gray, save_checkpoint, save_color, save_gray, write_colmap_text, write_frames,
    Checkpoint, ColmapImage, ColmapModel, ColmapPoint, DatasetManifest, ReferenceEntry, ViewEntry,
};
use spadsplat::losses::ssim_color_with_grad;
use spadsplat::metrics::{
    gray_quality, normalized_gray_renders, psnr_color, view_consistency, view_pairs,
};
use spadsplat::render::{render, RenderMode};
use spadsplat::sh::SH_C0;
use spadsplat::sim::{calibrate_gain, intensity_to_flux, Sensor, SensorConfig};
use spadsplat::toy::{toy_scene, toy_trajectory, ToyConfig};
use spadsplat::trainer::{
    self, init_cloud, stage2_colorize, GradcheckLoss, Stage1Targets, TrainConfig, Trainer,
};

use crate::overrides::train_config;
use crate::{
    ColorizeArgs, EvaluateArgs, GradcheckArgs, MakeToyArgs, ReconstructArgs, RenderArgs, SimulateArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Copy `src` to `out/rel` and return `rel`.
fn copy_into(src: &Path, out: &Path, rel: PathBuf) -> Result<PathBuf> {
    let dst = out.join(&rel);
    if let Some(parent) = dst.parent() {
        create_dir(parent)?;
    }
    fs::copy(src, &dst).with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    Ok(rel)
}

fn extension(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("png").to_string()
}

fn open_log(path: &Option<PathBuf>) -> Result<Option<BufWriter<fs::File>>> {
    path.as_ref()
        .map(|p| {
            fs::File::create(p)
                .map(BufWriter::new)
                .with_context(|| format!("creating {}", p.display()))
        })
        .transpose()
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let m = DatasetManifest::load(&a.manifest)?;
    let mut intensities: Vec<(u64, GrayImage)> = Vec::new();
    for v in m.views.iter().filter(|v| !v.held_out) {
        let img = match (&v.ground_truth, &v.ground_truth_color) {
            (Some(g), _) => load_gray(&m.resolve(g))?,
            (None, Some(c)) => load_color(&m.resolve(c))?.luminance(),
            (None, None) => bail!("view {} has no ground-truth image to simulate from", v.id),
        };
        if (img.width, img.height) != (v.camera.width as usize, v.camera.height as usize) {
            bail!("view {}: image is {}x{}, camera is {}x{}", v.id, img.width, img.height, v.camera.width, v.camera.height);
        }
        intensities.push((v.id, img));
    }
    let flux_gain = match (a.gain, a.target_rate) {
        (Some(g), _) => g,
        (None, Some(r)) => {
            let images: Vec<GrayImage> = intensities.iter().map(|(_, i)| i.clone()).collect();
            calibrate_gain(&images, a.dark_count, r)?
        }
        (None, None) => SensorConfig::default().flux_gain,
    };
    let sensor_cfg = SensorConfig {
        flux_gain,
        dark_count_rate: a.dark_count,
        dead_pixel_fraction: a.dead_pixels,
        seed: a.seed,
        poisson_reference: false,
    };
    sensor_cfg.validate()?;
    info!("gain {flux_gain:.6}, {} frames per view", a.frames_per_view);

    create_dir(&a.out.join("frames"))?;
    let mut out = DatasetManifest::new(sensor_cfg, &a.out);
    let mut detections = 0usize;
    let mut pixels = 0usize;
    for v in &m.views {
        let mut e = v.clone();
        e.ground_truth = v
            .ground_truth
            .as_ref()
            .map(|g| copy_into(&m.resolve(g), &a.out, format!("truth/view_{}.{}", v.id, extension(g)).into()))
            .transpose()?;
        e.ground_truth_color = v
            .ground_truth_color
            .as_ref()
            .map(|g| copy_into(&m.resolve(g), &a.out, format!("truth/view_{}_color.{}", v.id, extension(g)).into()))
            .transpose()?;
        e.frames = None;
        e.frame_count = 0;
        if let Some((_, img)) = intensities.iter().find(|(id, _)| *id == v.id) {
            let sensor = Sensor::new(sensor_cfg, img.width, img.height)?;
            let flux = intensity_to_flux(img, &sensor_cfg)?;
            let frames = sensor.sample_frames(&flux, v.id, a.frames_per_view)?;
            detections += frames.iter().map(|f| f.count_ones()).sum::<usize>();
            pixels += frames.len() * img.width * img.height;
            let rel = PathBuf::from(format!("frames/view_{}.pbf", v.id));
            write_frames(&a.out.join(&rel), img.width, img.height, &frames)?;
            e.frames = Some(rel);
            e.frame_count = frames.len();
        }
        out.views.push(e);
    }
    if pixels > 0 {
        info!("mean detection rate {:.4}", detections as f64 / pixels as f64);
    }
    if let Some(r) = &m.reference {
        let image = copy_into(&m.resolve(&r.image), &a.out, format!("reference.{}", extension(&r.image)).into())?;
        out.reference = Some(ReferenceEntry { image, ..r.clone() });
    }
    if let Some(p) = &m.points {
        out.points = Some(copy_into(&m.resolve(p), &a.out, "points3D.txt".into())?);
    }
    let path = a.out.join("manifest.toml");
    out.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let m = DatasetManifest::load(&a.manifest)?;
    let data = m.photon_dataset()?;
    let (mut trainer, flux_per_unit) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let optim = ck
                .optim
                .ok_or_else(|| anyhow!("{} has no optimizer state to resume from", path.display()))?;
            info!("resuming at iteration {}", ck.iter);
            (Trainer::resume(ck.cloud, optim, ck.config, ck.iter)?, ck.flux_per_unit)
        }
        None => {
            let cfg = train_config(&a.train, TrainConfig::default())?;
            let points = m.scene_points()?;
            let flux = m.sensor.flux_gain;
            let cloud = init_cloud(&points, &cfg, flux)?;
            (Trainer::new(cloud, cfg, &data)?, flux)
        }
    };
    let targets = Stage1Targets::for_config(&data, &trainer.config)?;
    let until = a.stop_at.unwrap_or(trainer.config.total_iters);
    let mut log = open_log(&a.log)?;
    let mut io_err = None;
    let every = a.progress_every.max(1);
    trainer.run(&data, &targets, until, |r| {
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "{}", r.to_line()) {
                io_err.get_or_insert(e);
            }
        }
        if (r.iter + 1) % every == 0 {
            info!("{}", r.to_line());
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing training log");
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let ck = Checkpoint {
        cloud: trainer.cloud,
        optim: Some(trainer.optim),
        config: trainer.config,
        iter: trainer.iter,
        flux_per_unit,
        trajectory: None,
    };
    save_checkpoint(&a.out, &ck)?;
    info!("{} Gaussians after {} iterations -> {}", ck.cloud.len(), ck.iter, a.out.display());
    Ok(())
}

pub fn colorize(a: &ColorizeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let m = DatasetManifest::load(&a.manifest)?;
    let (reference, view) = m.reference()?;
    let cfg = train_config(&a.train, ck.config.clone())?;
    let mut log = open_log(&a.log)?;
    let mut io_err = None;
    let (cloud, trajectory, losses) = stage2_colorize(&ck.cloud, &reference, &view, &cfg, ck.flux_per_unit, |it, l| {
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "iter={it} color={l:.6e}") {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing colorization log");
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        info!("color loss {first:.5} -> {last:.5} over {} steps", losses.len());
    }
    let out = Checkpoint {
        cloud,
        optim: None,
        config: cfg,
        iter: ck.iter,
        flux_per_unit: ck.flux_per_unit,
        trajectory: Some(trajectory),
    };
    save_checkpoint(&a.out, &out)?;
    Ok(())
}

fn parse_list<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {what} `{s}`"))?;
    v.try_into().map_err(|v: Vec<f64>| anyhow!("{what} needs {N} comma-separated numbers, got {}", v.len()))
}

fn is_colored(cloud: &GaussianCloud) -> bool {
    matches!(cloud.gray, GrayRadiance::Coupled { .. })
}

pub fn render_views(a: &RenderArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let mode = RenderMode::from_str(&a.mode)?;
    let pnm = match a.format.as_str() {
        "png" => false,
        "pnm" | "pgm" | "ppm" => true,
        other => bail!("unknown image format `{other}` (expected png or pnm)"),
    };
    if mode == RenderMode::Color && !is_colored(&ck.cloud) {
        warn!("checkpoint has not been colorized; color renders show the neutral default");
    }
    let mut views: Vec<(String, CameraView)> = Vec::new();
    if let Some(path) = &a.manifest {
        let m = DatasetManifest::load(path)?;
        for v in &m.views {
            views.push((format!("view_{}", v.id), v.view()?));
        }
    }
    if let (Some(p), Some(c)) = (&a.pose, &a.camera) {
        let p: [f64; 7] = parse_list(p, "pose")?;
        let c: [f64; 6] = parse_list(c, "camera")?;
        let k = CameraIntrinsics::new(c[0], c[1], c[2], c[3], c[4] as u32, c[5] as u32)?;
        let pose = CameraPose::from_wxyz([p[0], p[1], p[2], p[3]], Vector3::new(p[4], p[5], p[6]))?;
        views.push(("pose".into(), CameraView::new(k, pose)));
    }
    create_dir(&a.out)?;
    for (name, view) in &views {
        let out = render(&ck.cloud, view, mode)?;
        let base = a.out.join(format!("{name}_{}", a.mode));
        match mode {
            RenderMode::Color => {
                let ext = if pnm { "ppm" } else { "png" };
                save_color(&base.with_extension(ext), &out.color.expect("color render").clamped())?;
            }
            _ => {
                let img = match mode {
                    RenderMode::Gray => out.flux.expect("gray render").as_image().map(|v| v / ck.flux_per_unit),
                    RenderMode::PhotonProb => out.prob.expect("probability render"),
                    _ => {
                        let max = out.depth.data.iter().copied().fold(0.0, f64::max);
                        out.depth.map(|d| if max > 0.0 { d / max } else { 0.0 })
                    }
                };
                let ext = if pnm { "pgm" } else { "png" };
                save_gray(&base.with_extension(ext), &img)?;
            }
        }
    }
    info!("rendered {} views to {}", views.len(), a.out.display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let m = DatasetManifest::load(&a.manifest)?;
    let held_out: Vec<u64> = m.views.iter().filter(|v| v.held_out).map(|v| v.id).collect();
    let (subset, keep): (&str, Box<dyn Fn(u64) -> bool>) = if held_out.is_empty() {
        ("all", Box::new(|_| true))
    } else {
        ("held_out", Box::new(move |id| held_out.contains(&id)))
    };
    let mut rows: Vec<(String, String, f64)> = Vec::new();

    let gray: Vec<_> = m.gray_truth()?.into_iter().filter(|(id, _, _)| keep(*id)).collect();
    if !gray.is_empty() {
        let views: Vec<CameraView> = gray.iter().map(|(_, v, _)| *v).collect();
        let truth: Vec<GrayImage> = gray.into_iter().map(|(_, _, i)| i).collect();
        let pred = normalized_gray_renders(&ck.cloud, &views, ck.flux_per_unit)?;
        let q = gray_quality(&pred, &truth)?;
        rows.push(("gray_psnr".into(), subset.into(), q.psnr));
        rows.push(("gray_ssim".into(), subset.into(), q.ssim));
        rows.push(("gray_views".into(), subset.into(), q.images as f64));
    }

    let colored = is_colored(&ck.cloud);
    if colored {
        let color: Vec<_> = m.color_truth()?.into_iter().filter(|(id, _, _)| keep(*id)).collect();
        if !color.is_empty() {
            let (mut p, mut s) = (0.0, 0.0);
            for (_, v, truth) in &color {
                let pred: ColorImage = render(&ck.cloud, v, RenderMode::Color)?.color.expect("color render");
                p += psnr_color(&pred, truth, 1.0)?;
                s += ssim_color_with_grad(&pred, truth)?.0;
            }
            let n = color.len() as f64;
            rows.push(("color_psnr".into(), subset.into(), p / n));
            rows.push(("color_ssim".into(), subset.into(), s / n));
        }
    }

    let eval_views: Vec<CameraView> = m
        .views
        .iter()
        .filter(|v| keep(v.id))
        .map(|v| v.view())
        .collect::<spadsplat::Result<_>>()?;
    let mode = if colored { RenderMode::Color } else { RenderMode::Gray };
    let (short, long) = view_pairs(&eval_views);
    for (name, pairs) in [("short_range", short), ("long_range", long)] {
        let mut rmse = 0.0;
        let mut frac = 0.0;
        let mut used = 0usize;
        for (i, j) in &pairs {
            let c = view_consistency(&ck.cloud, &eval_views[*i], &eval_views[*j], mode)?;
            if !c.empty {
                rmse += c.rmse;
                frac += c.valid_fraction;
                used += 1;
            }
        }
        if used > 0 {
            rows.push((format!("consistency_rmse_{name}"), subset.into(), rmse / used as f64));
            rows.push((format!("consistency_valid_{name}"), subset.into(), frac / used as f64));
        }
        rows.push((format!("consistency_pairs_{name}"), subset.into(), used as f64));
    }
    rows.push(("gaussians".into(), "model".into(), ck.cloud.len() as f64));

    let mut table = String::from("metric,subset,value\n");
    for (k, s, v) in &rows {
        table.push_str(&format!("{k},{s},{v:.6}\n"));
    }
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let losses = if a.loss == "all" {
        vec![GradcheckLoss::Photon, GradcheckLoss::Gray, GradcheckLoss::Color, GradcheckLoss::Smooth]
    } else {
        vec![GradcheckLoss::from_str(&a.loss)?]
    };
    let mut worst: f64 = 0.0;
    println!("loss,group,parameters,max_rel_error,max_abs_grad,reduced_steps");
    for loss in losses {
        let r = trainer::gradcheck(a.gaussians, a.width, a.height, a.seed, loss)?;
        for line in r.to_string().lines().skip(1) {
            println!("{line}");
        }
        worst = worst.max(r.max_rel_error());
    }
    if worst >= a.tolerance {
        bail!("max relative error {worst:.3e} exceeds tolerance {:.1e}", a.tolerance);
    }
    Ok(())
}

pub fn make_toy(a: &MakeToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        num_gaussians: a.gaussians,
        width: a.size,
        height: a.size,
        train_views: a.train_views,
        test_views: a.test_views,
        seed: a.seed,
        ..ToyConfig::default()
    };
    let scene = toy_scene(&cfg)?;
    if scene.train_views.is_empty() {
        bail!("the toy scene needs at least one training view");
    }
    create_dir(&a.out.join("truth"))?;
    let mut m = DatasetManifest::new(SensorConfig::default(), &a.out);
    let all: Vec<(CameraView, bool)> = scene
        .train_views
        .iter()
        .map(|v| (*v, false))
        .chain(scene.test_views.iter().map(|v| (*v, true)))
        .collect();
    let views: Vec<CameraView> = all.iter().map(|(v, _)| *v).collect();
    let gray = scene.intensity_images(&views)?;
    let color = scene.color_images(&views)?;
    for (i, (view, held_out)) in all.iter().enumerate() {
        let g = PathBuf::from(format!("truth/view_{i:03}.png"));
        let c = PathBuf::from(format!("truth/view_{i:03}_color.png"));
        save_gray(&a.out.join(&g), &gray[i])?;
        save_color(&a.out.join(&c), &color[i].clamped())?;
        m.views.push(ViewEntry {
            id: i as u64,
            frames: None,
            frame_count: 0,
            ground_truth: Some(g),
            ground_truth_color: Some(c),
            held_out: *held_out,
            camera: view.intrinsics,
            pose: PoseEntry::from_pose(&view.pose),
        });
    }
    let ref_view = scene.train_views[0];
    let reference = scene.blurred_reference(&ref_view, &toy_trajectory(4))?;
    save_color(&a.out.join("reference.png"), &reference.clamped())?;
    m.reference = Some(ReferenceEntry {
        image: "reference.png".into(),
        camera: ref_view.intrinsics,
        pose: PoseEntry::from_pose(&ref_view.pose),
    });

    // sparse model: training cameras plus jittered centers colored by the truth
    let jittered = scene.sparse_points(0.05, a.seed);
    let points = scene
        .cloud
        .gaussians
        .iter()
        .zip(&jittered)
        .enumerate()
        .map(|(i, (g, p))| ColmapPoint {
            point_id: i as u64 + 1,
            position: p.position,
            rgb: g.sh_color[0].map(|c| ((SH_C0 * c + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8),
        })
        .collect();
    let images = scene
        .train_views
        .iter()
        .enumerate()
        .map(|(i, v)| ColmapImage {
            image_id: i as u64 + 1,
            camera_id: i as u64 + 1,
            name: format!("view_{i:03}.png"),
            view: *v,
        })
        .collect();
    write_colmap_text(&a.out.join("sparse"), &ColmapModel { images, points })?;
    m.points = Some("sparse/points3D.txt".into());

    let path = a.out.join("manifest.toml");
    m.save(&path)?;
    println!("{}", path.display());
    Ok(())
}
