//! Differentiable tile-based Gaussian rasterizer.
//!
//! Splats are binned into 16x16 tiles, depth-sorted per tile (ties broken by
//! index) and alpha-composited front to back. [`render_backward`] replays the
//! forward pass and returns exact gradients for every Gaussian attribute and for
//! a left-multiplied camera pose increment. [`reference::render_reference`] is a
//! slow per-pixel renderer with the same math, kept as an oracle.

mod project;
mod raster;
pub mod reference;

use nalgebra::{Vector2, Vector3};

pub use project::{Appearance, Culled, ProjectedGaussian};
pub use raster::Rasterizer;

use crate::camera::CameraView;
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianCloud, GrayRadiance};
use crate::image::{ColorImage, FluxImage, GrayImage};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Isotropic low-pass added to every screen-space covariance (pixels²).
pub const DILATION: f64 = 0.3;
/// Projection Jacobians are evaluated with `x/z`, `y/z` clamped to this multiple
/// of the half field of view.
pub const FRUSTUM_PAD: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderMode {
    /// Composited photon rate `C_gray`.
    Gray,
    Color,
    /// Detection probability `1 - exp(-C_gray)`.
    PhotonProb,
    /// Expected depth under the compositing weights.
    Depth,
}

impl RenderMode {
    pub fn channels(self) -> usize {
        match self {
            RenderMode::Color => 3,
            _ => 1,
        }
    }
}

impl std::str::FromStr for RenderMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Self::Gray),
            "color" => Ok(Self::Color),
            "photon_prob" => Ok(Self::PhotonProb),
            "depth" => Ok(Self::Depth),
            other => Err(crate::error::Error::InvalidParameter(format!(
                "unknown render mode `{other}` (expected gray, color, photon_prob or depth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Stop compositing a pixel once transmittance would fall below this value.
    pub termination: f64,
    /// Camera-frame near plane.
    pub near: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            termination: 1e-4,
            near: 0.1,
        }
    }
}

impl RenderSettings {
    pub fn exhaustive() -> Self {
        Self {
            termination: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderDiagnostics {
    pub visible: usize,
    pub culled: usize,
    /// Splats dropped because their screen covariance was not positive definite.
    pub degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub mode: RenderMode,
    /// Present in gray and photon-probability modes.
    pub flux: Option<FluxImage>,
    /// Present in photon-probability mode.
    pub prob: Option<GrayImage>,
    /// Present in color mode; composited values, not clamped.
    pub color: Option<ColorImage>,
    pub depth: GrayImage,
    pub transmittance: GrayImage,
    pub diagnostics: RenderDiagnostics,
}

impl RenderOutput {
    /// The image the mode is named after, as a flat channel-interleaved slice.
    pub fn primary(&self) -> &[f64] {
        match self.mode {
            RenderMode::Gray => self.flux.as_ref().map(|f| f.lambda()).unwrap_or(&[]),
            RenderMode::PhotonProb => self.prob.as_ref().map(|p| p.data.as_slice()).unwrap_or(&[]),
            RenderMode::Color => self.color.as_ref().map(|c| c.flat()).unwrap_or(&[]),
            RenderMode::Depth => &self.depth.data,
        }
    }

    /// Primary image of a single-channel mode.
    pub fn gray_image(&self) -> Option<GrayImage> {
        match self.mode {
            RenderMode::Gray => self.flux.as_ref().map(|f| f.as_image().clone()),
            RenderMode::PhotonProb => self.prob.clone(),
            RenderMode::Depth => Some(self.depth.clone()),
            RenderMode::Color => None,
        }
    }
}

/// Gradient with respect to a camera pose increment `p_cam' = exp(rotation) p_cam + translation`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PoseGradient {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

/// Per-Gaussian gradients of a scalar loss, indexed like the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub position: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    /// `len * coeffs_per_channel`, Gaussian-major.
    pub sh_gray: Vec<f64>,
    pub sh_color: Vec<[f64; 3]>,
    /// Screen-space mean gradient, for density control.
    pub mean2d: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
    pub camera: PoseGradient,
    pub coeffs_per_channel: usize,
}

impl RenderGradients {
    pub fn zeros(n: usize, coeffs_per_channel: usize) -> Self {
        Self {
            position: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            sh_gray: vec![0.0; n * coeffs_per_channel],
            sh_color: vec![[0.0; 3]; n * coeffs_per_channel],
            mean2d: vec![Vector2::zeros(); n],
            visible: vec![false; n],
            camera: PoseGradient::default(),
            coeffs_per_channel,
        }
    }

    pub fn for_cloud(cloud: &GaussianCloud) -> Self {
        Self::zeros(cloud.len(), cloud.coeffs_per_channel())
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// `self += scale * other`. Camera gradients are added as well.
    pub fn add_scaled(&mut self, other: &RenderGradients, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.position.iter_mut().zip(&other.position) {
            *a += b * scale;
        }
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            *a += b * scale;
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            for i in 0..4 {
                a[i] += b[i] * scale;
            }
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += b * scale;
        }
        for (a, b) in self.sh_gray.iter_mut().zip(&other.sh_gray) {
            *a += b * scale;
        }
        for (a, b) in self.sh_color.iter_mut().zip(&other.sh_color) {
            for ch in 0..3 {
                a[ch] += b[ch] * scale;
            }
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            *a += b * scale;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= *b;
        }
        self.camera.rotation += other.camera.rotation * scale;
        self.camera.translation += other.camera.translation * scale;
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().flatten().all(|x| x.is_finite())
            && self.opacity_logit.iter().all(|x| x.is_finite())
            && self.sh_gray.iter().all(|x| x.is_finite())
            && self.sh_color.iter().flatten().all(|x| x.is_finite())
            && self.camera.rotation.iter().all(|x| x.is_finite())
            && self.camera.translation.iter().all(|x| x.is_finite())
    }

    /// Flattened view of one Gaussian's gradients in the order
    /// position, log_scale, rotation, opacity, sh_gray, sh_color.
    pub fn flatten_gaussian(&self, i: usize) -> Vec<f64> {
        let k = self.coeffs_per_channel;
        let mut out = Vec::with_capacity(11 + 4 * k);
        out.extend(self.position[i].iter());
        out.extend(self.log_scale[i].iter());
        out.extend(self.rotation[i]);
        out.push(self.opacity_logit[i]);
        out.extend(&self.sh_gray[i * k..(i + 1) * k]);
        out.extend(self.sh_color[i * k..(i + 1) * k].iter().flatten());
        out
    }
}

/// Project a single Gaussian. `None` when it is behind the near plane, fully
/// transparent, degenerate, or its footprint misses the image.
pub fn project_gaussian(
    g: &Gaussian,
    index: usize,
    view: &CameraView,
    mode: RenderMode,
    gray: GrayRadiance,
) -> Option<ProjectedGaussian> {
    project::project(
        g,
        index,
        view,
        Appearance { mode, gray },
        RenderSettings::default().near,
        true,
    )
    .ok()
}

pub fn render(cloud: &GaussianCloud, view: &CameraView, mode: RenderMode) -> Result<RenderOutput> {
    render_with(cloud, view, mode, RenderSettings::default())
}

pub fn render_with(
    cloud: &GaussianCloud,
    view: &CameraView,
    mode: RenderMode,
    settings: RenderSettings,
) -> Result<RenderOutput> {
    Ok(Rasterizer::new(cloud, view, mode, settings)?.forward())
}

/// Gradients of `Σ upstream · output` for the given mode. `upstream` is
/// channel-interleaved with the mode's channel count.
pub fn render_backward(
    cloud: &GaussianCloud,
    view: &CameraView,
    mode: RenderMode,
    upstream: &[f64],
) -> Result<RenderGradients> {
    render_backward_with(cloud, view, mode, upstream, RenderSettings::default())
}

pub fn render_backward_with(
    cloud: &GaussianCloud,
    view: &CameraView,
    mode: RenderMode,
    upstream: &[f64],
    settings: RenderSettings,
) -> Result<RenderGradients> {
    Rasterizer::new(cloud, view, mode, settings)?.backward(upstream)
}
