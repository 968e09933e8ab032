use std::fs;

use nalgebra::Vector3;
use proptest::prelude::*;
use spadsplat::camera::CameraIntrinsics;
use spadsplat::image::{BinaryFrame, ColorImage, GrayImage};
use spadsplat::io::manifest::PoseEntry;
use spadsplat::io::{
    decode_checkpoint, decode_frames, encode_checkpoint, encode_frames, load_checkpoint, load_color, load_gray,
    parse_colmap_text, read_frames, save_checkpoint, save_color, save_gray, write_colmap_text, write_frames,
    Checkpoint, ColmapImage, ColmapModel, ColmapPoint, DatasetManifest, ViewEntry,
};
use spadsplat::sim::{intensity_to_flux, Sensor, SensorConfig};
use spadsplat::toy::{toy_scene, toy_trajectory, ToyConfig};
use spadsplat::trainer::{init_cloud, PhotonDataset, Stage1Targets, TrainConfig, Trainer};
use spadsplat::Error;

fn bits(width: usize, height: usize, seed: u64) -> BinaryFrame {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let v: Vec<bool> = (0..width * height)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state & 1 == 1
        })
        .collect();
    BinaryFrame::from_bits(width, height, &v).unwrap()
}

#[test]
fn frames_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pbf");
    let frames: Vec<BinaryFrame> = (0..5).map(|s| bits(13, 7, s)).collect();
    write_frames(&path, 13, 7, &frames).unwrap();
    let back = read_frames(&path).unwrap();
    assert_eq!((back.width, back.height), (13, 7));
    assert_eq!(back.frames, frames);
}

#[test]
fn corrupted_frame_files_give_distinct_errors() {
    let bytes = encode_frames(9, 3, &[bits(9, 3, 1), bits(9, 3, 2)]).unwrap();
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(matches!(decode_frames(&magic), Err(Error::BadMagic { .. })));
    assert!(matches!(decode_frames(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_frames(&long), Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_encoding_round_trips(w in 1usize..40, h in 1usize..12, n in 0usize..4, seed in any::<u64>()) {
        let frames: Vec<BinaryFrame> = (0..n as u64).map(|i| bits(w, h, seed ^ i)).collect();
        let back = decode_frames(&encode_frames(w, h, &frames).unwrap()).unwrap();
        prop_assert_eq!(back.frames, frames);
    }

    #[test]
    fn arbitrary_bytes_never_panic_the_frame_decoder(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
        let _ = decode_frames(&bytes);
        let mut with_magic = b"PBF1".to_vec();
        with_magic.extend(&bytes);
        let _ = decode_frames(&with_magic);
    }

    #[test]
    fn arbitrary_colmap_text_never_panics(lines in proptest::collection::vec("[0-9A-Z_ .e-]{0,60}", 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let text = lines.join("\n");
        for name in ["cameras.txt", "images.txt", "points3D.txt"] {
            fs::write(dir.path().join(name), &text).unwrap();
        }
        let _ = parse_colmap_text(dir.path());
    }

    #[test]
    fn arbitrary_checkpoint_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_checkpoint(&bytes);
    }
}

fn toy() -> spadsplat::toy::ToyScene {
    toy_scene(&ToyConfig {
        num_gaussians: 12,
        width: 24,
        height: 20,
        train_views: 3,
        test_views: 1,
        ..ToyConfig::default()
    })
    .unwrap()
}

#[test]
fn colmap_round_trip_preserves_reprojection() {
    let scene = toy();
    let dir = tempfile::tempdir().unwrap();
    let model = ColmapModel {
        images: scene
            .train_views
            .iter()
            .enumerate()
            .map(|(i, v)| ColmapImage {
                image_id: i as u64 + 1,
                camera_id: i as u64 + 1,
                name: format!("im{i}.png"),
                view: *v,
            })
            .collect(),
        points: scene
            .cloud
            .gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| ColmapPoint { point_id: i as u64, position: g.position, rgb: [10, 200, 30] })
            .collect(),
    };
    write_colmap_text(dir.path(), &model).unwrap();
    let back = parse_colmap_text(dir.path()).unwrap();
    assert_eq!(back.images.len(), model.images.len());
    assert_eq!(back.points, model.points);
    for (a, b) in model.images.iter().zip(&back.images) {
        assert_eq!(a.name, b.name);
        for p in &model.points {
            let pa = a.view.intrinsics.project(&a.view.pose.transform_point(&p.position));
            let pb = b.view.intrinsics.project(&b.view.pose.transform_point(&p.position));
            assert!((pa - pb).norm() < 1e-6);
        }
    }
}

#[test]
fn colmap_rejects_unknown_models_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cameras.txt"), "# c\n1 OPENCV 10 10 5 5 5 5 0 0 0 0\n").unwrap();
    fs::write(dir.path().join("images.txt"), "").unwrap();
    fs::write(dir.path().join("points3D.txt"), "").unwrap();
    assert!(matches!(parse_colmap_text(dir.path()), Err(Error::UnsupportedCameraModel(m)) if m == "OPENCV"));
    fs::write(dir.path().join("cameras.txt"), "1 PINHOLE 10 10 5 5 5\n").unwrap();
    assert!(matches!(parse_colmap_text(dir.path()), Err(Error::Parse { line: 1, .. })));
}

fn frames_for(scene: &spadsplat::toy::ToyScene, n: usize) -> PhotonDataset {
    let cfg = SensorConfig::default();
    let frames = scene
        .intensity_images(&scene.train_views)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, img)| {
            Sensor::new(cfg, img.width, img.height)
                .unwrap()
                .sample_frames(&intensity_to_flux(img, &cfg).unwrap(), i as u64, n)
                .unwrap()
        })
        .collect();
    PhotonDataset::new(scene.train_views.clone(), frames).unwrap()
}

#[test]
fn checkpoints_round_trip_and_resume_exactly() {
    let scene = toy();
    let data = frames_for(&scene, 6);
    let config = TrainConfig::scaled(200);
    let flux = SensorConfig::default().flux_gain;
    let cloud = init_cloud(&scene.sparse_points(0.05, 2), &config, flux).unwrap();
    let targets = Stage1Targets::Photon;
    let k = 60;

    let mut whole = Trainer::new(cloud.clone(), config.clone(), &data).unwrap();
    let mut reference = Vec::new();
    whole.run(&data, &targets, k + 10, |r| reference.push(r.total)).unwrap();

    let mut first = Trainer::new(cloud, config, &data).unwrap();
    first.run(&data, &targets, k, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ck");
    let ck = Checkpoint {
        cloud: first.cloud.clone(),
        optim: Some(first.optim.clone()),
        config: first.config.clone(),
        iter: first.iter,
        flux_per_unit: flux,
        trajectory: Some(toy_trajectory(3)),
    };
    save_checkpoint(&path, &ck).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ck);
    let again = dir.path().join("b.ck");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

    let mut resumed = Trainer::resume(loaded.cloud, loaded.optim.unwrap(), loaded.config, loaded.iter).unwrap();
    let mut after = Vec::new();
    resumed.run(&data, &targets, k + 10, |r| after.push(r.total)).unwrap();
    assert_eq!(after.len(), 10);
    assert!((after[9] - reference[(k + 9) as usize]).abs() < 1e-6);
    assert_eq!(resumed.cloud, whole.cloud);
}

#[test]
fn checkpoint_version_and_framing_are_checked() {
    let scene = toy();
    let ck = Checkpoint {
        cloud: scene.cloud,
        optim: None,
        config: TrainConfig::default(),
        iter: 3,
        flux_per_unit: 0.5,
        trajectory: None,
    };
    let bytes = encode_checkpoint(&ck).unwrap();
    assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    let mut wrong = bytes.clone();
    wrong[4] = 99;
    assert!(matches!(decode_checkpoint(&wrong), Err(Error::VersionMismatch { found: 99, .. })));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
    let mut magic = bytes;
    magic[1] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic { .. })));
}

#[test]
fn images_round_trip_at_file_precision() {
    let dir = tempfile::tempdir().unwrap();
    let gray = GrayImage::from_vec(5, 3, (0..15).map(|i| i as f64 / 14.0).collect()).unwrap();
    let color = ColorImage::from_vec(2, 2, vec![[0.0, 0.5, 1.0], [0.25, 0.75, 0.1], [1.0, 1.0, 1.0], [0.3, 0.2, 0.9]])
        .unwrap();
    for (ext, tol) in [("png", 0.5 / 65535.0), ("pgm", 0.5 / 255.0)] {
        let p = dir.path().join(format!("g.{ext}"));
        save_gray(&p, &gray).unwrap();
        let back = load_gray(&p).unwrap();
        assert!(back.data.iter().zip(&gray.data).all(|(a, b)| (a - b).abs() <= tol + 1e-6));
    }
    for (ext, tol) in [("png", 0.5 / 65535.0), ("ppm", 0.5 / 255.0)] {
        let p = dir.path().join(format!("c.{ext}"));
        save_color(&p, &color).unwrap();
        let back = load_color(&p).unwrap();
        assert!(back.flat().iter().zip(color.flat()).all(|(a, b)| (a - b).abs() <= tol + 1e-6));
    }
    assert!(save_gray(&dir.path().join("g.gif"), &gray).is_err());
}

#[test]
fn manifests_are_validated_against_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let camera = CameraIntrinsics::centered(20.0, 8, 4).unwrap();
    let frames: Vec<BinaryFrame> = (0..3).map(|s| bits(8, 4, s)).collect();
    write_frames(&root.join("v0.pbf"), 8, 4, &frames).unwrap();
    let entry = ViewEntry {
        id: 0,
        frames: Some("v0.pbf".into()),
        frame_count: 3,
        ground_truth: None,
        ground_truth_color: None,
        held_out: false,
        camera,
        pose: PoseEntry { qvec: [1.0, 0.0, 0.0, 0.0], tvec: [0.0, 0.0, 3.0] },
    };
    let mut m = DatasetManifest::new(SensorConfig::default(), root);
    m.views.push(entry.clone());
    let path = root.join("manifest.toml");
    m.save(&path).unwrap();
    let loaded = DatasetManifest::load(&path).unwrap();
    assert_eq!(loaded.photon_dataset().unwrap().frames[0], frames);

    let check = |edit: &dyn Fn(&mut DatasetManifest)| {
        let mut bad = m.clone();
        edit(&mut bad);
        bad.validate()
    };
    assert!(check(&|b| b.views[0].frame_count = 4).is_err());
    assert!(check(&|b| b.views[0].camera.width = 9).is_err());
    assert!(check(&|b| b.views[0].frames = Some("missing.pbf".into())).is_err());
    assert!(check(&|b| b.views.push(entry.clone())).is_err());
    assert!(check(&|b| b.views[0].pose.qvec = [0.0; 4]).is_err());
    assert!(check(&|b| b.points = Some("nope.txt".into())).is_err());
    assert!(check(&|b| b.views[0].ground_truth = Some("gt.png".into())).is_err());
    assert!(check(&|b| b.views[0].camera.fx = f64::NAN).is_err());
    // positions in the points file are used directly
    fs::write(root.join("p.txt"), "1 0.5 -1 2 255 0 0 0.1\n").unwrap();
    let mut with_points = m.clone();
    with_points.points = Some("p.txt".into());
    let pts = with_points.scene_points().unwrap();
    assert_eq!(pts[0].position, Vector3::new(0.5, -1.0, 2.0));
    assert!((pts[0].gray.unwrap() - 0.299).abs() < 1e-12);
}
