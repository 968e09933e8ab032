//! Scene representation: anisotropic Gaussians with gray and color SH appearance.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::sh::{self, num_coeffs};

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Color radiance is `SH(sh_color) + COLOR_OFFSET`; it stays linear in the
/// coefficients so that luma coupling commutes with rendering.
pub const COLOR_OFFSET: f64 = 0.5;

pub const DEFAULT_SH_DEGREE: usize = 2;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn luminance(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

/// How a Gaussian's gray radiance (its contribution to the photon rate) is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrayRadiance {
    /// `softplus(SH(sh_gray))`, nonnegative flux. Used while recovering geometry.
    Flux,
    /// `flux_scale * (SH(sh_gray) + COLOR_OFFSET)` with `sh_gray` tied to the luma
    /// of `sh_color`. Gray renders are then exactly `flux_scale * luma(color render)`.
    Coupled { flux_scale: f64 },
}

impl GrayRadiance {
    /// Radiance for a pre-activation SH value, and its derivative.
    pub fn activate(self, s: f64) -> (f64, f64) {
        match self {
            GrayRadiance::Flux => (softplus(s), sigmoid(s)),
            GrayRadiance::Coupled { flux_scale } => (flux_scale * (s + COLOR_OFFSET), flux_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Natural log of the per-axis standard deviation.
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`; kept at unit norm by the optimizer.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub sh_gray: Vec<f64>,
    pub sh_color: Vec<[f64; 3]>,
}

impl Gaussian {
    /// An isotropic Gaussian with DC-only appearance.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, degree: usize) -> Self {
        Self {
            position,
            log_scale: Vector3::repeat(sigma.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            sh_gray: vec![0.0; num_coeffs(degree)],
            sh_color: vec![[0.0; 3]; num_coeffs(degree)],
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// Set the gray DC coefficient so the flux activation yields `flux` in every direction
    /// (higher bands zeroed).
    pub fn set_gray_flux(&mut self, flux: f64) {
        self.sh_gray.iter_mut().for_each(|c| *c = 0.0);
        self.sh_gray[0] = softplus_inverse(flux) / sh::SH_C0;
    }

    /// Set a view-independent color (higher bands zeroed).
    pub fn set_color(&mut self, rgb: [f64; 3]) {
        self.sh_color.iter_mut().for_each(|c| *c = [0.0; 3]);
        for ch in 0..3 {
            self.sh_color[0][ch] = (rgb[ch] - COLOR_OFFSET) / sh::SH_C0;
        }
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_from_params(&self.log_scale, self.rotation)
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(self.rotation);
        if n > 0.0 && n.is_finite() {
            self.rotation.iter_mut().for_each(|c| *c /= n);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh_gray.iter().all(|v| v.is_finite())
            && self.sh_color.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: usize,
    pub gray: GrayRadiance,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            sh_degree,
            gray: GrayRadiance::Flux,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn coeffs_per_channel(&self) -> usize {
        num_coeffs(self.sh_degree)
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        let k = self.coeffs_per_channel();
        if g.sh_gray.len() != k || g.sh_color.len() != k {
            return Err(Error::InvalidParameter(format!(
                "gaussian SH length ({}, {}) does not match cloud degree {} ({k} coefficients)",
                g.sh_gray.len(),
                g.sh_color.len(),
                self.sh_degree
            )));
        }
        self.gaussians.push(g);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "SH degree {} exceeds {}",
                self.sh_degree,
                sh::MAX_SH_DEGREE
            )));
        }
        let k = self.coeffs_per_channel();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh_gray.len() != k || g.sh_color.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "gaussian {i} has mismatched SH length"
                )));
            }
            if !g.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "gaussian {i} has non-finite parameters"
                )));
            }
        }
        if let GrayRadiance::Coupled { flux_scale } = self.gray {
            if !(flux_scale > 0.0 && flux_scale.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "flux scale must be positive, got {flux_scale}"
                )));
            }
        }
        Ok(())
    }

    /// Re-derive every gray coefficient vector from the color coefficients.
    pub fn sync_gray_from_color(&mut self) {
        for g in &mut self.gaussians {
            g.sh_gray = couple_color_to_gray(&g.sh_color);
        }
    }
}

/// Per-coefficient luma transform from 3-channel SH to gray SH.
pub fn couple_color_to_gray(sh_color: &[[f64; 3]]) -> Vec<f64> {
    sh_color.iter().map(|c| luminance(*c)).collect()
}

pub(crate) fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a gradient on the rotation matrix back to the unit quaternion `q`.
pub fn quat_matrix_vjp(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`. The quaternion is normalized first.
pub fn covariance_from_params(log_scale: &Vector3<f64>, rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    if !log_scale.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite scale or rotation".into(),
        ));
    }
    let n = quat_norm(rotation);
    if n == 0.0 {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    let q = rotation.map(|c| c / n);
    let m = quat_to_matrix(q) * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    Ok(m * m.transpose())
}

/// Backpropagate `dL/dΣ` (symmetric) to `(log_scale, raw quaternion)`.
pub fn covariance_vjp(
    log_scale: &Vector3<f64>,
    rotation: [f64; 4],
    d_cov: &Matrix3<f64>,
) -> (Vector3<f64>, [f64; 4]) {
    let n = quat_norm(rotation);
    let q = rotation.map(|c| c / n);
    let r = quat_to_matrix(q);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    // Σ = M Mᵀ, G symmetric ⇒ dL/dM = (G + Gᵀ) M
    let d_m = (d_cov + d_cov.transpose()) * m;
    let mut d_log_scale = Vector3::zeros();
    for i in 0..3 {
        let d_si: f64 = (0..3).map(|row| d_m[(row, i)] * r[(row, i)]).sum();
        d_log_scale[i] = d_si * s[i];
    }
    let d_r = d_m * Matrix3::from_diagonal(&s);
    let d_qhat = quat_matrix_vjp(q, &d_r);
    let dot: f64 = (0..4).map(|i| d_qhat[i] * q[i]).sum();
    let d_q = [0, 1, 2, 3].map(|i| (d_qhat[i] - q[i] * dot) / n);
    (d_log_scale, d_q)
}
