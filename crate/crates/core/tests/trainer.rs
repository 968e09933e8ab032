use nalgebra::Vector3;
use spadsplat::camera::CameraView;
use spadsplat::gaussian::{luminance, GaussianCloud, GrayRadiance};
use spadsplat::image::ColorImage;
use spadsplat::render::{render, render_backward, RenderMode};
use spadsplat::sim::{intensity_to_flux, Sensor, SensorConfig};
use spadsplat::toy::{toy_scene, ToyConfig, ToyScene};
use spadsplat::trainer::{
    init_cloud, stage1_step, stage2_colorize, OptimState, PhotonDataset, ScenePoint, Stage1Targets, TrainConfig,
    Trainer,
};

fn small_scene(gaussians: usize, size: u32, views: usize) -> ToyScene {
    toy_scene(&ToyConfig {
        num_gaussians: gaussians,
        width: size,
        height: size,
        train_views: views,
        test_views: 2,
        seed: 5,
        ..ToyConfig::default()
    })
    .unwrap()
}

fn photon_data(scene: &ToyScene, frames: usize) -> (PhotonDataset, f64) {
    let cfg = SensorConfig::default();
    let images = scene.intensity_images(&scene.train_views).unwrap();
    let frames = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let sensor = Sensor::new(cfg, img.width, img.height).unwrap();
            sensor.sample_frames(&intensity_to_flux(img, &cfg).unwrap(), i as u64, frames).unwrap()
        })
        .collect();
    (PhotonDataset::new(scene.train_views.clone(), frames).unwrap(), cfg.flux_gain)
}

fn trainer_for(scene: &ToyScene, data: &PhotonDataset, flux: f64, config: TrainConfig) -> Trainer {
    let cloud = init_cloud(&scene.sparse_points(0.05, 1), &config, flux).unwrap();
    Trainer::new(cloud, config, data).unwrap()
}

fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    v.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn photon_loss_decreases_on_a_single_gaussian() {
    let scene = small_scene(1, 24, 4);
    let (data, flux) = photon_data(&scene, 50);
    let mut config = TrainConfig::scaled(500);
    config.sh_degree = 2;
    let mut t = trainer_for(&scene, &data, flux, config);
    let targets = Stage1Targets::for_config(&data, &t.config).unwrap();
    let mut losses = Vec::new();
    t.run(&data, &targets, 500, |r| losses.push(r.photon)).unwrap();
    let avg = moving_average(&losses, 50);
    assert!(
        avg.last().unwrap() < &(0.9 * avg[0]),
        "first window {} last window {}",
        avg[0],
        avg.last().unwrap()
    );
}

#[test]
fn smoothing_starts_exactly_at_its_milestone() {
    let scene = small_scene(4, 16, 2);
    let (data, flux) = photon_data(&scene, 4);
    let config = TrainConfig::default();
    assert_eq!(config.smooth_start_iter, 15_000);
    let t = trainer_for(&scene, &data, flux, config);
    let targets = Stage1Targets::Photon;
    let run_at = |iter: u64| {
        let mut cloud = t.cloud.clone();
        let mut optim = t.optim.clone();
        stage1_step(&mut cloud, &data, &targets, &mut optim, &t.config, iter).unwrap()
    };
    assert!(run_at(14_999).smooth.is_none());
    let r = run_at(15_000);
    let s = r.smooth.expect("smoothing active");
    assert!(s.is_finite() && s >= 0.0);
    assert!((r.total - (r.photon + t.config.weights.smooth * s)).abs() < 1e-15);
}

#[test]
fn rotations_stay_unit_and_training_is_deterministic() {
    let scene = small_scene(6, 20, 3);
    let (data, flux) = photon_data(&scene, 8);
    let config = TrainConfig::scaled(150);
    let targets = Stage1Targets::Photon;
    let mut a = trainer_for(&scene, &data, flux, config.clone());
    let mut b = trainer_for(&scene, &data, flux, config);
    while !a.is_done() {
        let ra = a.step(&data, &targets).unwrap();
        let rb = b.step(&data, &targets).unwrap();
        assert_eq!((ra.view, ra.photon.to_bits()), (rb.view, rb.photon.to_bits()));
        for g in &a.cloud.gaussians {
            let n: f64 = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.optim, b.optim);
}

#[test]
fn split_run_matches_uninterrupted_run() {
    let scene = small_scene(6, 20, 3);
    let (data, flux) = photon_data(&scene, 8);
    let config = TrainConfig::scaled(120);
    let targets = Stage1Targets::Photon;
    let mut whole = trainer_for(&scene, &data, flux, config.clone());
    whole.run(&data, &targets, 120, |_| {}).unwrap();
    let mut first = trainer_for(&scene, &data, flux, config);
    first.run(&data, &targets, 55, |_| {}).unwrap();
    let mut second = Trainer::resume(first.cloud, first.optim, first.config, first.iter).unwrap();
    second.run(&data, &targets, 120, |_| {}).unwrap();
    assert_eq!(second.cloud, whole.cloud);
}

#[test]
fn transparent_gaussians_receive_no_updates() {
    let scene = small_scene(5, 20, 2);
    let (data, flux) = photon_data(&scene, 4);
    let mut t = trainer_for(&scene, &data, flux, TrainConfig::scaled(100));
    t.cloud.gaussians[2].opacity_logit = -40.0;
    let view = data.views[0];
    let upstream = vec![1.0; view.intrinsics.num_pixels()];
    let g = render_backward(&t.cloud, &view, RenderMode::PhotonProb, &upstream).unwrap();
    assert!(g.flatten_gaussian(2).iter().all(|&v| v == 0.0));
    let before = t.cloud.gaussians[2].clone();
    t.run(&data, &Stage1Targets::Photon, 10, |_| {}).unwrap();
    let after = &t.cloud.gaussians[2];
    assert_eq!(after.position, before.position);
    assert_eq!(after.log_scale, before.log_scale);
    assert_eq!(after.opacity_logit, before.opacity_logit);
    assert_eq!(after.sh_gray, before.sh_gray);
}

#[test]
fn init_scale_is_neighbor_spacing_on_a_grid() {
    let spacing = 0.1;
    let points: Vec<ScenePoint> = (0..4)
        .flat_map(|i| (0..4).flat_map(move |j| (0..4).map(move |k| (i, j, k))))
        .map(|(i, j, k)| ScenePoint {
            position: Vector3::new(i as f64, j as f64, k as f64) * spacing,
            gray: Some(0.4),
        })
        .collect();
    let cloud = init_cloud(&points, &TrainConfig::default(), 2.0).unwrap();
    for g in &cloud.gaussians {
        for s in g.scale().iter() {
            assert!((s - spacing).abs() < 1e-12, "{s}");
        }
        assert!((g.opacity() - 0.1).abs() < 1e-12);
    }
}

fn colorized(
    cloud: &GaussianCloud,
    reference: &ColorImage,
    view: &CameraView,
    config: &TrainConfig,
    kappa: f64,
) -> GaussianCloud {
    stage2_colorize(cloud, reference, view, config, kappa, |_, _| {}).unwrap().0
}

#[test]
fn colorized_gray_is_scaled_luminance() {
    let scene = small_scene(12, 24, 2);
    let view = scene.train_views[0];
    let reference = scene.color_images(&[view]).unwrap().remove(0);
    let config = TrainConfig { stage2_iters: 30, ..TrainConfig::default() };
    let kappa = 1.7;
    let cloud = colorized(&scene.cloud, &reference, &view, &config, kappa);
    assert_eq!(cloud.gray, GrayRadiance::Coupled { flux_scale: kappa });
    for v in scene.test_views.iter().chain([&view]) {
        let gray = render(&cloud, v, RenderMode::Gray).unwrap().flux.unwrap().into_image();
        let color = render(&cloud, v, RenderMode::Color).unwrap().color.unwrap();
        for (g, c) in gray.data.iter().zip(&color.rgb) {
            assert!((g / kappa - luminance(*c)).abs() < 1e-5);
        }
    }
}

#[test]
fn achromatic_reference_gives_achromatic_color() {
    let scene = small_scene(12, 24, 2);
    let view = scene.train_views[1];
    let gray = scene.intensity_images(&[view]).unwrap().remove(0);
    let reference = ColorImage::from_vec(gray.width, gray.height, gray.data.iter().map(|&v| [v; 3]).collect()).unwrap();
    let config = TrainConfig { stage2_iters: 60, ..TrainConfig::default() };
    let cloud = colorized(&scene.cloud, &reference, &view, &config, 1.0);
    for v in scene.test_views.iter().chain([&view]) {
        let color = render(&cloud, v, RenderMode::Color).unwrap().color.unwrap();
        for [r, g, b] in &color.rgb {
            assert!((r - g).abs() < 1e-2 && (g - b).abs() < 1e-2);
        }
    }
}

#[test]
fn sharp_reference_is_fit_with_pinned_knots() {
    let scene = small_scene(15, 32, 2);
    let view = scene.train_views[0];
    let reference = scene.color_images(&[view]).unwrap().remove(0);
    let config = TrainConfig { stage2_iters: 400, pin_knots: true, ..TrainConfig::default() };
    let (cloud, traj, _) = stage2_colorize(&scene.cloud, &reference, &view, &config, 1.0, |_, _| {}).unwrap();
    assert!(traj.knots.iter().all(|k| k.as_array() == [0.0; 6]));
    let blurred = traj.render_blurred(&cloud, &view).unwrap();
    let l1 = blurred
        .flat()
        .iter()
        .zip(reference.flat())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / reference.flat().len() as f64;
    assert!(l1 < 1e-2, "L1 {l1}");
}

#[test]
fn optimizer_rows_track_the_cloud() {
    let scene = small_scene(3, 16, 1);
    let cloud = init_cloud(&scene.sparse_points(0.0, 0), &TrainConfig::default(), 1.0).unwrap();
    let optim = OptimState::new(&cloud);
    assert_eq!(optim.rows(), 3);
    let mut bigger = cloud.clone();
    bigger.push(cloud.gaussians[0].clone()).unwrap();
    assert!(optim.check(&bigger).is_err());
    assert!(Trainer::resume(bigger, optim, TrainConfig::default(), 0).is_err());
}
