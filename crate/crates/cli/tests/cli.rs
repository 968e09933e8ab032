use std::path::Path;
use std::process::{Command, Output};

use spadsplat::gaussian::GaussianCloud;
use spadsplat::io::{load_gray, save_checkpoint, Checkpoint, DatasetManifest};
use spadsplat::trainer::TrainConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spadsplat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_cloud_renders_black() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("empty.ck");
    save_checkpoint(
        &ck,
        &Checkpoint {
            cloud: GaussianCloud::new(2),
            optim: None,
            config: TrainConfig::default(),
            iter: 0,
            flux_per_unit: 1.0,
            trajectory: None,
        },
    )
    .unwrap();
    let out = dir.path().join("r");
    ok(&[
        "render",
        "--checkpoint",
        s(&ck),
        "--out",
        s(&out),
        "--pose",
        "1,0,0,0,0,0,4",
        "--camera",
        "20,20,8,6,16,12",
    ]);
    let img = load_gray(&out.join("pose_gray.png")).unwrap();
    assert_eq!((img.width, img.height), (16, 12));
    assert!(img.data.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_frames_per_view_gives_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let sim = dir.path().join("sim");
    ok(&["make-toy", "--out", s(&gt), "--gaussians", "5", "--size", "16", "--train-views", "2", "--test-views", "1"]);
    ok(&[
        "simulate",
        "--manifest",
        s(&gt.join("manifest.toml")),
        "--out",
        s(&sim),
        "--frames-per-view",
        "0",
    ]);
    let m = DatasetManifest::load(&sim.join("manifest.toml")).unwrap();
    assert_eq!(m.views.len(), 3);
    assert!(m.views.iter().all(|v| v.frame_count == 0));
    assert!(m.views.iter().filter(|v| !v.held_out).all(|v| v.frames.is_some()));
    assert!(m.views.iter().filter(|v| v.held_out).all(|v| v.frames.is_none()));
    // training on no frames is an error, not a panic
    let out = run(&["reconstruct", "--manifest", s(&sim.join("manifest.toml")), "--out", s(&dir.path().join("x.ck"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_flags_and_bad_values_fail() {
    assert!(!run(&["reconstruct", "--no-such-flag"]).status.success());
    assert!(!run(&["gradcheck", "--loss", "nonsense"]).status.success());
    assert!(!run(&["simulate", "--manifest", "/nonexistent/manifest.toml", "--out", "/tmp/x"]).status.success());
}

#[test]
fn gradcheck_command_reports_every_group() {
    let out = ok(&["gradcheck", "--gaussians", "3", "--width", "16", "--height", "12", "--loss", "color"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "loss,group,parameters,max_rel_error,max_abs_grad,reduced_steps");
    for group in ["position", "log_scale", "rotation", "opacity", "sh_color", "trajectory"] {
        assert!(lines.iter().any(|l| l.starts_with(&format!("color,{group},"))), "{group} missing:\n{out}");
    }
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["make-toy", "--out", s(&p("gt")), "--gaussians", "20", "--size", "24", "--train-views", "4", "--test-views", "2"]);
    ok(&[
        "simulate",
        "--manifest",
        s(&p("gt/manifest.toml")),
        "--out",
        s(&p("sim")),
        "--target-rate",
        "0.122",
        "--frames-per-view",
        "10",
    ]);
    let manifest = p("sim/manifest.toml");
    ok(&[
        "reconstruct",
        "--manifest",
        s(&manifest),
        "--out",
        s(&p("s1.ck")),
        "--total-iters",
        "60",
        "--stop-at",
        "30",
        "--log",
        s(&p("log1.txt")),
    ]);
    ok(&["reconstruct", "--manifest", s(&manifest), "--out", s(&p("s1.ck")), "--resume", s(&p("s1.ck"))]);
    assert_eq!(std::fs::read_to_string(p("log1.txt")).unwrap().lines().count(), 30);
    ok(&[
        "colorize",
        "--checkpoint",
        s(&p("s1.ck")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&p("s2.ck")),
        "--stage2-iters",
        "10",
        "--set",
        "m_blur=3",
    ]);
    let ck = spadsplat::io::load_checkpoint(&p("s2.ck")).unwrap();
    assert_eq!(ck.iter, 60);
    assert_eq!(ck.trajectory.unwrap().len(), 3);
    for mode in ["gray", "color", "depth", "photon_prob"] {
        ok(&["render", "--checkpoint", s(&p("s2.ck")), "--manifest", s(&manifest), "--out", s(&p("r")), "--mode", mode]);
    }
    assert_eq!(std::fs::read_dir(p("r")).unwrap().count(), 4 * 6);
    let table = ok(&["evaluate", "--checkpoint", s(&p("s2.ck")), "--manifest", s(&manifest), "--out", s(&p("m.csv"))]);
    assert_eq!(table, std::fs::read_to_string(p("m.csv")).unwrap());
    for metric in ["gray_psnr,held_out,", "gray_ssim,held_out,", "color_psnr,held_out,"] {
        let line = table.lines().find(|l| l.starts_with(metric)).expect(metric);
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.is_finite() && v > 0.0, "{line}");
    }
}
