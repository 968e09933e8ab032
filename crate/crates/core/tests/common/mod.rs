#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spadsplat::camera::{CameraIntrinsics, CameraPose, CameraView};
use spadsplat::gaussian::{logit, Gaussian, GaussianCloud, GrayRadiance};
use spadsplat::sh::num_coeffs;

pub fn small_view(width: u32, height: u32) -> CameraView {
    let k = CameraIntrinsics::centered(0.9 * width as f64, width, height).unwrap();
    let pose = CameraPose::look_at(
        Vector3::new(0.3, -0.2, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    )
    .unwrap();
    CameraView::new(k, pose)
}

/// Anisotropic Gaussians near the origin with random SH up to `degree`.
/// Opacities stay below the alpha clamp.
pub fn random_cloud(seed: u64, n: usize, degree: usize, gray: GrayRadiance) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::new(degree);
    cloud.gray = gray;
    let k = num_coeffs(degree);
    for _ in 0..n {
        let position = Vector3::new(
            rng.gen_range(-0.7..0.7),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.5..0.5),
        );
        let mut q = [
            rng.gen_range(0.3..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        let mut sh_color = vec![[0.0; 3]; k];
        for (j, c) in sh_color.iter_mut().enumerate() {
            let amp = if j == 0 { 0.8 } else { 0.25 };
            *c = [0, 1, 2].map(|_| rng.gen_range(-amp..amp));
        }
        let sh_gray = match gray {
            GrayRadiance::Flux => (0..k)
                .map(|j| rng.gen_range(-1.0..1.0) * if j == 0 { 1.5 } else { 0.3 })
                .collect(),
            GrayRadiance::Coupled { .. } => spadsplat::gaussian::couple_color_to_gray(&sh_color),
        };
        cloud
            .push(Gaussian {
                position,
                log_scale: Vector3::new(
                    rng.gen_range(-2.3..-1.2),
                    rng.gen_range(-2.3..-1.2),
                    rng.gen_range(-2.3..-1.2),
                ),
                rotation: q,
                opacity_logit: logit(rng.gen_range(0.3..0.85)),
                sh_gray,
                sh_color,
            })
            .unwrap();
    }
    cloud
}

pub fn random_upstream(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(floor))
}
