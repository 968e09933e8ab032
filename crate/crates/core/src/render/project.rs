//! First-order (EWA) projection of 3D Gaussians into screen space.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{RenderMode, ALPHA_MIN, DILATION, FRUSTUM_PAD};
use crate::camera::CameraView;
use crate::gaussian::{sigmoid, Gaussian, GrayRadiance, COLOR_OFFSET};
use crate::sh;

/// A Gaussian as seen from one view.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub parent_index: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Camera-frame z of the mean.
    pub depth: f64,
    pub opacity: f64,
    /// Activated radiance for the render mode (gray uses channel 0).
    pub radiance: [f64; 3],
    /// Pixel radius beyond which the splat's alpha stays below `ALPHA_MIN`.
    pub radius: f64,
    pub(crate) cache: ProjectionCache,
}

#[derive(Debug, Clone)]
pub(crate) struct ProjectionCache {
    pub p_cam: Vector3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub clamped_x: bool,
    pub clamped_y: bool,
    pub txtz: f64,
    pub tytz: f64,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    /// Pre-activation SH value (gray) used for the activation derivative.
    pub gray_pre: f64,
}

/// Why a Gaussian produced no screen-space splat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Culled {
    BehindNearPlane,
    OutsideFrustum,
    Transparent,
    Degenerate,
}

/// Appearance needed to activate radiance for a given mode.
#[derive(Debug, Clone, Copy)]
pub struct Appearance {
    pub mode: RenderMode,
    pub gray: GrayRadiance,
}

pub(crate) fn max_eigenvalue(cov: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let half = 0.5 * (cov[(0, 0)] - cov[(1, 1)]);
    mid + (half * half + cov[(0, 1)] * cov[(1, 0)]).max(0.0).sqrt()
}

/// Project `g` into `view`. With `cull_to_image` false, only the near plane,
/// transparency and degeneracy checks apply.
pub(crate) fn project(
    g: &Gaussian,
    index: usize,
    view: &CameraView,
    appearance: Appearance,
    near: f64,
    cull_to_image: bool,
) -> Result<ProjectedGaussian, Culled> {
    let k = &view.intrinsics;
    let w = view.pose.rotation_matrix();
    let p_cam = w * g.position + view.pose.translation;
    if !(p_cam.z > near) {
        return Err(Culled::BehindNearPlane);
    }
    let opacity = sigmoid(g.opacity_logit);
    if 255.0 * opacity <= 1.0 {
        return Err(Culled::Transparent);
    }
    let cov = g.covariance().map_err(|_| Culled::Degenerate)?;
    let cov_cam = w * cov * w.transpose();

    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let lim_x = FRUSTUM_PAD * 0.5 * k.width as f64 / k.fx;
    let lim_y = FRUSTUM_PAD * 0.5 * k.height as f64 / k.fy;
    let (rx, ry) = (x / z, y / z);
    let txtz = rx.clamp(-lim_x, lim_x);
    let tytz = ry.clamp(-lim_y, lim_y);
    let jacobian = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * txtz / z,
        0.0,
        k.fy / z,
        -k.fy * tytz / z,
    );
    let cov2d = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * DILATION;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return Err(Culled::Degenerate);
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mean2d = Vector2::new(k.fx * rx + k.cx, k.fy * ry + k.cy);
    let lambda_max = max_eigenvalue(&cov2d);
    let radius = (2.0 * lambda_max * (255.0 * opacity).ln()).sqrt() + 0.01;

    if cull_to_image {
        let (wf, hf) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
        if mean2d.x + radius < 0.0
            || mean2d.x - radius > wf
            || mean2d.y + radius < 0.0
            || mean2d.y - radius > hf
            || !mean2d.iter().all(|v| v.is_finite())
        {
            return Err(Culled::OutsideFrustum);
        }
    }

    let offset = g.position - view.pose.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 {
        offset / view_dist
    } else {
        Vector3::z()
    };

    let degree = sh::degree_for_count(g.sh_gray.len()).map_err(|_| Culled::Degenerate)?;
    let basis = sh::basis(degree, &view_dir);
    let mut radiance = [0.0; 3];
    let mut gray_pre = 0.0;
    match appearance.mode {
        RenderMode::Gray | RenderMode::PhotonProb => {
            gray_pre = g.sh_gray.iter().zip(basis.iter()).map(|(c, b)| c * b).sum();
            radiance[0] = appearance.gray.activate(gray_pre).0;
        }
        RenderMode::Color => {
            for (c, b) in g.sh_color.iter().zip(basis.iter()) {
                for ch in 0..3 {
                    radiance[ch] += c[ch] * b;
                }
            }
            radiance.iter_mut().for_each(|v| *v += COLOR_OFFSET);
        }
        RenderMode::Depth => radiance[0] = z,
    }

    Ok(ProjectedGaussian {
        parent_index: index,
        mean2d,
        cov2d,
        conic,
        depth: z,
        opacity,
        radiance,
        radius,
        cache: ProjectionCache {
            p_cam,
            cov_cam,
            jacobian,
            clamped_x: rx != txtz,
            clamped_y: ry != tytz,
            txtz,
            tytz,
            view_dir,
            view_dist,
            gray_pre,
        },
    })
}

/// Screen-space alpha at pixel `(px, py)`: `(alpha, gaussian_value, clamped)`, or `None`
/// when below `ALPHA_MIN`.
#[inline]
pub(crate) fn splat_alpha(p: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, f64, bool)> {
    let dx = px - p.mean2d.x;
    let dy = py - p.mean2d.y;
    let [a, b, c] = p.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > 0.0 {
        return None;
    }
    let gval = power.exp();
    let raw = p.opacity * gval;
    let alpha = raw.min(super::ALPHA_MAX);
    if alpha < ALPHA_MIN {
        return None;
    }
    Some((alpha, gval, raw > super::ALPHA_MAX))
}
