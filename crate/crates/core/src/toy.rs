//! A small synthetic scene with known geometry, color and cameras.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, CameraView};
use crate::error::{Error, Result};
use crate::gaussian::{logit, luminance, Gaussian, GaussianCloud, GrayRadiance};
use crate::image::{ColorImage, GrayImage};
use crate::losses::blur_average;
use crate::render::{render, RenderMode};
use crate::trainer::{BlurTrajectory, Knot, ScenePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub num_gaussians: usize,
    pub width: u32,
    pub height: u32,
    pub train_views: usize,
    pub test_views: usize,
    pub sh_degree: usize,
    /// Distance of every camera from the origin.
    pub camera_distance: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_gaussians: 100,
            width: 64,
            height: 64,
            train_views: 40,
            test_views: 8,
            sh_degree: 2,
            camera_distance: 4.0,
            seed: 0,
        }
    }
}

/// Ground truth for closed-loop experiments. The cloud uses flux gray
/// radiance equal to the luminance of its view-independent color, so its gray
/// render is the normalized intensity image.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub cloud: GaussianCloud,
    pub train_views: Vec<CameraView>,
    pub test_views: Vec<CameraView>,
}

impl ToyScene {
    /// Ground-truth intensity at each of `views`.
    pub fn intensity_images(&self, views: &[CameraView]) -> Result<Vec<GrayImage>> {
        views
            .iter()
            .map(|v| Ok(render(&self.cloud, v, RenderMode::Gray)?.flux.expect("gray render").into_image()))
            .collect()
    }

    /// Ground-truth color at each of `views`.
    pub fn color_images(&self, views: &[CameraView]) -> Result<Vec<ColorImage>> {
        views
            .iter()
            .map(|v| Ok(render(&self.cloud, v, RenderMode::Color)?.color.expect("color render")))
            .collect()
    }

    /// Average of the ground-truth color renders along `trajectory` at `view`.
    pub fn blurred_reference(&self, view: &CameraView, trajectory: &BlurTrajectory) -> Result<ColorImage> {
        blur_average(&self.color_images(&trajectory.views(view))?)
    }

    /// Gaussian centers moved by isotropic noise of `jitter` world units,
    /// without gray values.
    pub fn sparse_points(&self, jitter: f64, seed: u64) -> Vec<ScenePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.cloud
            .gaussians
            .iter()
            .map(|g| ScenePoint {
                position: g.position + Vector3::from_fn(|_, _| jitter * rng.gen_range(-1.0..1.0)),
                gray: None,
            })
            .collect()
    }
}

/// Cameras at `distance` from the origin looking at it, with directions spread
/// over a band of latitudes by a golden-angle spiral. `phase` in `[0, 1)` shifts
/// the spiral so train and test sets do not coincide.
pub fn orbit_views(n: usize, distance: f64, width: u32, height: u32, phase: f64) -> Result<Vec<CameraView>> {
    let k = CameraIntrinsics::centered(1.25 * width.max(height) as f64, width, height)?;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5 + phase) / n as f64;
            // latitude in [-0.6, 0.6] rad keeps the world y axis usable as up
            let lat = -0.6 + 1.2 * t;
            let lon = golden * (i as f64 + phase * 7.0);
            let dir = Vector3::new(lat.cos() * lon.cos(), lat.sin(), lat.cos() * lon.sin());
            let pose = CameraPose::look_at(distance * dir, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0))?;
            Ok(CameraView::new(k, pose))
        })
        .collect()
}

/// A short straight camera sweep of `m` knots, centered on the reference
/// pose: about 6 pixels of sideways travel at the default camera distance plus
/// a slight roll and pan.
pub fn toy_trajectory(m: usize) -> BlurTrajectory {
    let knots = (0..m)
        .map(|i| {
            let t = if m > 1 { i as f64 / (m - 1) as f64 - 0.5 } else { 0.0 };
            Knot::from_array([0.02 * t, -0.03 * t, 0.01 * t, 0.25 * t, 0.12 * t, -0.04 * t])
        })
        .collect();
    BlurTrajectory { knots }
}

/// A cluster of colored Gaussians inside the unit ball plus two orbits of cameras.
pub fn toy_scene(config: &ToyConfig) -> Result<ToyScene> {
    if config.num_gaussians == 0 {
        return Err(Error::InvalidParameter("toy scene needs at least one Gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = GaussianCloud::new(config.sh_degree);
    cloud.gray = GrayRadiance::Flux;
    for _ in 0..config.num_gaussians {
        let position = loop {
            let p = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            if p.norm() <= 1.0 {
                break p;
            }
        };
        let mut g = Gaussian::isotropic(position, 1.0, 0.5, config.sh_degree);
        g.log_scale = Vector3::from_fn(|_, _| rng.gen_range(0.07f64..0.18).ln());
        let mut q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        q.iter_mut().for_each(|v| *v /= n);
        g.rotation = q;
        g.opacity_logit = logit(rng.gen_range(0.6..0.95));
        let rgb = [0, 1, 2].map(|_| rng.gen_range(0.1..1.0));
        g.set_color(rgb);
        g.set_gray_flux(luminance(rgb));
        cloud.push(g)?;
    }
    let (w, h, d) = (config.width, config.height, config.camera_distance);
    Ok(ToyScene {
        cloud,
        train_views: orbit_views(config.train_views, d, w, h, 0.0)?,
        test_views: orbit_views(config.test_views, d, w, h, 0.5)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_visible_and_bounded() {
        let s = toy_scene(&ToyConfig::default()).unwrap();
        assert_eq!(s.cloud.len(), 100);
        let imgs = s.intensity_images(&s.test_views).unwrap();
        for im in &imgs {
            let max = im.data.iter().copied().fold(0.0, f64::max);
            assert!(im.mean() > 0.05 && max <= 1.0 + 1e-9, "mean {} max {max}", im.mean());
        }
    }
}
