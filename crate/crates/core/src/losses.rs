//! Training objectives. Each loss returns its value and the gradient with
//! respect to the rendered image it consumes, ready for `render_backward`.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraView;
use crate::error::{mismatch, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::{BinaryFrame, ColorImage, GrayImage};
use crate::render::{render, render_backward, RenderGradients, RenderMode};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-6;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with respect to each input pixel (channel-interleaved).
    pub pixel_grad: Vec<f64>,
}

/// Mean binary cross-entropy between predicted detection probabilities and one frame.
///
/// Pixels whose probability is clamped get zero gradient.
pub fn photon_loss(pred_prob: &GrayImage, target: &BinaryFrame) -> Result<LossValue> {
    if pred_prob.width != target.width() || pred_prob.height != target.height() {
        return Err(mismatch(
            format!("{}x{}", target.width(), target.height()),
            format!("{}x{}", pred_prob.width, pred_prob.height),
        ));
    }
    let n = pred_prob.data.len().max(1) as f64;
    let bits = target.to_f64();
    let mut value = 0.0;
    let mut pixel_grad = Vec::with_capacity(bits.len());
    for (&p_raw, &b) in pred_prob.data.iter().zip(&bits) {
        let p = p_raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        value -= if b > 0.5 { p.ln() } else { (-p).ln_1p() };
        let g = if p == p_raw {
            (p - b) / (p * (1.0 - p)) / n
        } else {
            0.0
        };
        pixel_grad.push(g);
    }
    Ok(LossValue {
        value: value / n,
        pixel_grad,
    })
}

/// Result of the translation-jitter smoothing regularizer.
#[derive(Debug, Clone)]
pub struct SmoothLoss {
    /// `pixel_grad` is taken with respect to `mean(perturbed) - base`.
    pub loss: LossValue,
    /// Gradients accumulated through every render involved.
    pub gradients: RenderGradients,
}

/// L1 between the mean of `num_perturbed` photon-probability renders at
/// translation-jittered poses and the render at `base_view`.
///
/// Jitter is isotropic `N(0, sigma²)` added to the camera translation. With
/// `stop_grad_mean`, no gradient flows through the perturbed renders.
pub fn smooth_loss<R: Rng>(
    cloud: &GaussianCloud,
    base_view: &CameraView,
    sigma: f64,
    num_perturbed: usize,
    rng: &mut R,
    stop_grad_mean: bool,
) -> Result<SmoothLoss> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if num_perturbed == 0 {
        return Err(Error::InvalidParameter("num_perturbed must be at least 1".into()));
    }
    if sigma == 0.0 {
        // every jittered pose coincides with the base pose
        let n = base_view.intrinsics.num_pixels();
        return Ok(SmoothLoss {
            loss: LossValue {
                value: 0.0,
                pixel_grad: vec![0.0; n],
            },
            gradients: RenderGradients::for_cloud(cloud),
        });
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let views: Vec<CameraView> = (0..num_perturbed)
        .map(|_| {
            let jitter = Vector3::from_fn(|_, _| normal.sample(rng));
            base_view.with_pose(base_view.pose.perturbed(&Vector3::zeros(), &jitter))
        })
        .collect();

    let base = prob_image(cloud, base_view)?;
    let mut mean = vec![0.0; base.len()];
    for v in &views {
        let p = prob_image(cloud, v)?;
        for (m, x) in mean.iter_mut().zip(&p) {
            *m += x;
        }
    }
    let inv = 1.0 / num_perturbed as f64;
    let n = base.len().max(1) as f64;
    let mut value = 0.0;
    let mut pixel_grad = Vec::with_capacity(base.len());
    for (m, b) in mean.iter_mut().zip(&base) {
        *m *= inv;
        let d = *m - b;
        value += d.abs();
        pixel_grad.push(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    value /= n;

    let mut gradients = RenderGradients::for_cloud(cloud);
    if pixel_grad.iter().any(|&g| g != 0.0) {
        let neg: Vec<f64> = pixel_grad.iter().map(|g| -g).collect();
        gradients.add_scaled(
            &render_backward(cloud, base_view, RenderMode::PhotonProb, &neg)?,
            1.0,
        );
        if !stop_grad_mean {
            for v in &views {
                let g = render_backward(cloud, v, RenderMode::PhotonProb, &pixel_grad)?;
                gradients.add_scaled(&g, inv);
            }
        }
    }
    Ok(SmoothLoss {
        loss: LossValue { value, pixel_grad },
        gradients,
    })
}

fn prob_image(cloud: &GaussianCloud, view: &CameraView) -> Result<Vec<f64>> {
    let out = render(cloud, view, RenderMode::PhotonProb)?;
    Ok(out.prob.map(|p| p.data).unwrap_or_default())
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatter a `(w - 10) x (h - 10)` map back to `w x h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for j in 0..SSIM_WINDOW {
                rows[(y + j) * ow + x] += k[j] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for j in 0..SSIM_WINDOW {
                out[y * w + x + j] += k[j] * v;
            }
        }
    }
    out
}

/// Mean SSIM of one plane and its gradient with respect to `a`.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let k = ssim_kernel();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_aa = filter_valid(&sq(a, a), w, h, &k);
    let e_bb = filter_valid(&sq(b, b), w, h, &k);
    let e_ab = filter_valid(&sq(a, b), w, h, &k);
    let m = mu_a.len();
    let mut total = 0.0;
    let (mut d_mu, mut d_aa, mut d_ab) = if want_grad {
        (vec![0.0; m], vec![0.0; m], vec![0.0; m])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for q in 0..m {
        let (ma, mb) = (mu_a[q], mu_b[q]);
        let var_a = e_aa[q] - ma * ma;
        let var_b = e_bb[q] - mb * mb;
        let cov = e_ab[q] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = var_a + var_b + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let inv_m = 1.0 / m as f64;
            d_mu[q] = inv_m * s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
            d_aa[q] = -inv_m * s / b2;
            d_ab[q] = inv_m * 2.0 * a1 / (b1 * b2);
        }
    }
    let mean = total / m as f64;
    if !want_grad {
        return (mean, Vec::new());
    }
    let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
    let g_aa = filter_valid_adjoint(&d_aa, w, h, &k);
    let g_ab = filter_valid_adjoint(&d_ab, w, h, &k);
    let grad = (0..w * h)
        .map(|i| g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i])
        .collect();
    (mean, grad)
}

fn check_ssim_size(w: usize, h: usize) -> Result<()> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Mean structural similarity (11x11 Gaussian window, σ = 1.5, valid region only).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.same_shape(b)?;
    check_ssim_size(a.width, a.height)?;
    Ok(ssim_plane(&a.data, &b.data, a.width, a.height, false).0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &GrayImage, b: &GrayImage) -> Result<(f64, Vec<f64>)> {
    a.same_shape(b)?;
    check_ssim_size(a.width, a.height)?;
    Ok(ssim_plane(&a.data, &b.data, a.width, a.height, true))
}

fn channel(img: &ColorImage, ch: usize) -> Vec<f64> {
    img.rgb.iter().map(|p| p[ch]).collect()
}

/// Channel-averaged SSIM of two color images and its interleaved gradient with respect to `a`.
pub fn ssim_color_with_grad(a: &ColorImage, b: &ColorImage) -> Result<(f64, Vec<f64>)> {
    a.same_shape(b)?;
    check_ssim_size(a.width, a.height)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; 3 * a.rgb.len()];
    for ch in 0..3 {
        let (s, g) = ssim_plane(&channel(a, ch), &channel(b, ch), a.width, a.height, true);
        total += s / 3.0;
        for (i, v) in g.into_iter().enumerate() {
            grad[3 * i + ch] = v / 3.0;
        }
    }
    Ok((total, grad))
}

/// Pixelwise mean of several color renders, as seen by a blurred exposure.
pub fn blur_average(renders: &[ColorImage]) -> Result<ColorImage> {
    let first = renders
        .first()
        .ok_or_else(|| Error::InvalidInput("no renders to average".into()))?;
    let mut out = ColorImage::new(first.width, first.height);
    let inv = 1.0 / renders.len() as f64;
    for r in renders {
        first.same_shape(r)?;
        for (o, p) in out.rgb.iter_mut().zip(&r.rgb) {
            for ch in 0..3 {
                o[ch] += p[ch] * inv;
            }
        }
    }
    Ok(out)
}

/// `(1 - γ) L1 + γ (1 - SSIM) / 2`. The gradient is with respect to `blur_pred`;
/// each of the `m` averaged renders receives `pixel_grad / m`.
pub fn color_loss(blur_pred: &ColorImage, reference: &ColorImage, gamma: f64) -> Result<LossValue> {
    blur_pred.same_shape(reference)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must be in [0, 1], got {gamma}")));
    }
    let a = blur_pred.flat();
    let b = reference.flat();
    let n = a.len().max(1) as f64;
    let mut l1 = 0.0;
    let mut pixel_grad = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        l1 += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        pixel_grad.push((1.0 - gamma) * s / n);
    }
    l1 /= n;
    let mut value = (1.0 - gamma) * l1;
    if gamma > 0.0 {
        let (s, g) = ssim_color_with_grad(blur_pred, reference)?;
        value += gamma * (1.0 - s) / 2.0;
        for (pg, gs) in pixel_grad.iter_mut().zip(g) {
            *pg -= gamma * gs / 2.0;
        }
    }
    Ok(LossValue { value, pixel_grad })
}

/// Mean absolute error between a rendered image and a target of the same shape.
pub fn l1_loss(pred: &GrayImage, target: &GrayImage) -> Result<LossValue> {
    pred.same_shape(target)?;
    let n = pred.data.len().max(1) as f64;
    let mut value = 0.0;
    let pixel_grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a - b;
            value += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue {
        value: value / n,
        pixel_grad,
    })
}

/// Relative weights of the stage-1 terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Stage1Weights {
    pub photon: f64,
    pub smooth: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self {
            photon: 1.0,
            smooth: 1.0,
        }
    }
}

/// `L_photon + L_smooth`; pass `None` while the smoothing term is disabled.
pub fn stage1_loss(photon: &LossValue, smooth: Option<&LossValue>) -> f64 {
    stage1_loss_weighted(photon, smooth, Stage1Weights::default())
}

pub fn stage1_loss_weighted(
    photon: &LossValue,
    smooth: Option<&LossValue>,
    weights: Stage1Weights,
) -> f64 {
    weights.photon * photon.value + smooth.map_or(0.0, |s| weights.smooth * s.value)
}
