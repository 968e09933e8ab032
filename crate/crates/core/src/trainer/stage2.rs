//! Colorization against one motion-blurred reference image.
//!
//! Geometry is frozen. Color SH is the free appearance parameter and gray SH
//! is re-derived from it through the luma map after every update. The blur is
//! modeled by `m` camera poses around the reference pose whose color renders
//! are averaged.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Moments, TrainConfig};
use crate::camera::{so3_left_jacobian, CameraPose, CameraView};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GrayRadiance, COLOR_OFFSET};
use crate::image::ColorImage;
use crate::losses::{blur_average, color_loss};
use crate::render::{render, render_backward, RenderGradients, RenderMode};
use crate::sh;
use crate::sim::derive_seed;

/// A camera increment applied on the left of the reference pose:
/// `p_cam = exp(omega) (R p + t) + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub omega: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Knot {
    pub fn identity() -> Self {
        Self {
            omega: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, reference: &CameraPose) -> CameraPose {
        reference.perturbed(&self.omega, &self.translation)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            omega: Vector3::new(a[0], a[1], a[2]),
            translation: Vector3::new(a[3], a[4], a[5]),
        }
    }

    /// Gradient on `(omega, translation)` from the gradient on a left camera increment.
    pub fn pull_back(&self, pose_grad: &crate::render::PoseGradient) -> [f64; 6] {
        let g_rot = pose_grad.rotation - self.translation.cross(&pose_grad.translation);
        let d_omega = so3_left_jacobian(&self.omega).transpose() * g_rot;
        let t = pose_grad.translation;
        [d_omega.x, d_omega.y, d_omega.z, t.x, t.y, t.z]
    }
}

/// The virtual camera poses whose renders are averaged into the reference exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurTrajectory {
    pub knots: Vec<Knot>,
}

impl BlurTrajectory {
    pub fn identity(m: usize) -> Self {
        Self {
            knots: vec![Knot::identity(); m],
        }
    }

    /// Identity knots with independent `N(0, std²)` offsets in every coordinate.
    pub fn jittered<R: Rng>(m: usize, std: f64, rng: &mut R) -> Self {
        let mut t = Self::identity(m);
        if std > 0.0 {
            for k in &mut t.knots {
                let mut a = [0.0; 6];
                for v in &mut a {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
                *k = Knot::from_array(a);
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn views(&self, reference: &CameraView) -> Vec<CameraView> {
        self.knots
            .iter()
            .map(|k| reference.with_pose(k.apply(&reference.pose)))
            .collect()
    }

    /// Average of the color renders at every knot.
    pub fn render_blurred(&self, cloud: &GaussianCloud, reference: &CameraView) -> Result<ColorImage> {
        let renders = self
            .views(reference)
            .iter()
            .map(|v| Ok(render(cloud, v, RenderMode::Color)?.color.expect("color render")))
            .collect::<Result<Vec<_>>>()?;
        blur_average(&renders)
    }
}

/// Directions on which the gray appearance is sampled for the achromatic start.
fn fibonacci_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Switch the cloud to coupled gray radiance with an achromatic color start.
///
/// Each Gaussian's color SH is the least-squares fit (identical in all three
/// channels) of its current gray radiance divided by `flux_scale`, so gray
/// renders change only by the fitting residual.
pub fn prepare_for_colorization(cloud: &mut GaussianCloud, flux_scale: f64) -> Result<()> {
    if !(flux_scale > 0.0 && flux_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "flux_scale must be positive, got {flux_scale}"
        )));
    }
    cloud.validate()?;
    let degree = cloud.sh_degree;
    let k = sh::num_coeffs(degree);
    let dirs = fibonacci_directions(64);
    let basis = DMatrix::from_fn(dirs.len(), k, |r, c| sh::basis(degree, &dirs[r])[c]);
    let pinv = basis
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let gray = cloud.gray;
    for g in &mut cloud.gaussians {
        let tone = DVector::from_iterator(
            dirs.len(),
            dirs.iter().map(|d| {
                let s: f64 = g
                    .sh_gray
                    .iter()
                    .zip(sh::basis(degree, d).iter())
                    .map(|(c, b)| c * b)
                    .sum();
                gray.activate(s).0 / flux_scale - COLOR_OFFSET
            }),
        );
        let coeffs = &pinv * tone;
        for (j, c) in g.sh_color.iter_mut().enumerate() {
            *c = [coeffs[j]; 3];
        }
    }
    cloud.gray = GrayRadiance::Coupled { flux_scale };
    keep_color_nonnegative(cloud);
    Ok(())
}

/// Pull every color channel back to nonnegative values in all directions and
/// re-derive gray. Negative colors would make the rendered gray (a flux,
/// clamped at zero) disagree with the luminance of the rendered color.
///
/// Per band, `|sum_m c_lm Y_lm(d)| <= |c_l| sqrt((2l + 1) / 4pi)`, so a channel is
/// nonnegative everywhere when its mean color covers the sum of these bounds.
/// Otherwise the view-dependent part is shrunk uniformly until it does; a
/// negative mean color is raised to zero.
pub fn keep_color_nonnegative(cloud: &mut GaussianCloud) {
    let degree = cloud.sh_degree;
    for g in &mut cloud.gaussians {
        for ch in 0..3 {
            let mean = COLOR_OFFSET + sh::SH_C0 * g.sh_color[0][ch];
            let swing: f64 = (1..=degree)
                .map(|l| {
                    let band = &g.sh_color[l * l..(l + 1) * (l + 1)];
                    let norm = band.iter().map(|c| c[ch] * c[ch]).sum::<f64>().sqrt();
                    norm * ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt()
                })
                .sum();
            if mean >= swing {
                continue;
            }
            let shrink = if mean > 0.0 {
                mean / swing
            } else {
                g.sh_color[0][ch] = -COLOR_OFFSET / sh::SH_C0;
                0.0
            };
            g.sh_color[1..].iter_mut().for_each(|c| c[ch] *= shrink);
        }
    }
    cloud.sync_gray_from_color();
}

/// Optimizer state for colorization.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorizeState {
    pub trajectory: BlurTrajectory,
    pub step: u64,
    pub color_dc: Moments,
    pub color_rest: Moments,
    pub knots: Moments,
}

impl ColorizeState {
    pub fn new(cloud: &GaussianCloud, config: &TrainConfig) -> Self {
        let trajectory = if config.pin_knots {
            BlurTrajectory::identity(config.m_blur)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 0, 3]));
            BlurTrajectory::jittered(config.m_blur, config.knot_jitter, &mut rng)
        };
        let n = cloud.len();
        let k = cloud.coeffs_per_channel();
        Self {
            knots: Moments::new(6, trajectory.len()),
            trajectory,
            step: 0,
            color_dc: Moments::new(3, n),
            color_rest: Moments::new(3 * (k - 1), n),
        }
    }
}

/// Loss and gradients of the blurred color objective, without updating anything.
pub(crate) fn stage2_gradients(
    cloud: &GaussianCloud,
    trajectory: &BlurTrajectory,
    reference: &ColorImage,
    reference_view: &CameraView,
    gamma: f64,
) -> Result<(f64, RenderGradients, Vec<[f64; 6]>)> {
    if reference.width != reference_view.width() || reference.height != reference_view.height() {
        return Err(crate::error::mismatch(
            format!("{}x{}", reference_view.width(), reference_view.height()),
            format!("{}x{}", reference.width, reference.height),
        ));
    }
    let views = trajectory.views(reference_view);
    let blurred = trajectory.render_blurred(cloud, reference_view)?;
    let loss = color_loss(&blurred, reference, gamma)?;
    let inv_m = 1.0 / views.len() as f64;
    let upstream: Vec<f64> = loss.pixel_grad.iter().map(|g| g * inv_m).collect();
    let mut grads = RenderGradients::for_cloud(cloud);
    let mut knot_grads = Vec::with_capacity(views.len());
    for (view, knot) in views.iter().zip(&trajectory.knots) {
        let g = render_backward(cloud, view, RenderMode::Color, &upstream)?;
        knot_grads.push(knot.pull_back(&g.camera));
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss.value, grads, knot_grads))
}

/// One colorization update. Returns the color loss before the update.
pub fn stage2_step(
    cloud: &mut GaussianCloud,
    state: &mut ColorizeState,
    reference: &ColorImage,
    reference_view: &CameraView,
    config: &TrainConfig,
) -> Result<f64> {
    if !matches!(cloud.gray, GrayRadiance::Coupled { .. }) {
        return Err(Error::InvalidParameter(
            "cloud must be prepared for colorization first".into(),
        ));
    }
    let (loss, grads, knot_grads) =
        stage2_gradients(cloud, &state.trajectory, reference, reference_view, config.gamma)?;
    if !grads.is_finite() || knot_grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient(format!("colorization step {}", state.step)));
    }

    state.step += 1;
    let t = state.step;
    let frac = (t as f64 / config.stage2_iters.max(1) as f64).min(1.0);
    let decay = config.lr.stage2_final_fraction.powf(frac);
    let lr_dc = config.lr.sh_color * decay;
    let lr_rest = lr_dc / config.lr.sh_rest_divisor;
    let adam = &config.adam;
    let k = cloud.coeffs_per_channel();
    for (i, g) in cloud.gaussians.iter_mut().enumerate() {
        let gc = &grads.sh_color[i * k..(i + 1) * k];
        let flat = g.sh_color.as_flattened_mut();
        let gflat = gc.as_flattened();
        state.color_dc.update(i, &mut flat[..3], &gflat[..3], lr_dc, t, adam);
        state.color_rest.update(i, &mut flat[3..], &gflat[3..], lr_rest, t, adam);
    }
    keep_color_nonnegative(cloud);

    if !config.pin_knots {
        let lr_knot = config.lr.trajectory * decay;
        for (j, knot) in state.trajectory.knots.iter_mut().enumerate() {
            let mut a = knot.as_array();
            state.knots.update(j, &mut a, &knot_grads[j], lr_knot, t, adam);
            *knot = Knot::from_array(a);
        }
    }
    Ok(loss)
}

/// Colorize a stage-1 cloud. Returns the colored cloud, the fitted blur
/// trajectory, and the loss at every step.
pub fn stage2_colorize(
    cloud: &GaussianCloud,
    reference: &ColorImage,
    reference_view: &CameraView,
    config: &TrainConfig,
    flux_scale: f64,
    mut on_loss: impl FnMut(u64, f64),
) -> Result<(GaussianCloud, BlurTrajectory, Vec<f64>)> {
    config.validate()?;
    let mut colored = cloud.clone();
    prepare_for_colorization(&mut colored, flux_scale)?;
    let mut state = ColorizeState::new(&colored, config);
    let mut losses = Vec::with_capacity(config.stage2_iters as usize);
    for it in 0..config.stage2_iters {
        let l = stage2_step(&mut colored, &mut state, reference, reference_view, config)?;
        on_loss(it, l);
        losses.push(l);
    }
    Ok((colored, state.trajectory, losses))
}

/// Move gray-SH gradients onto the color SH through the luma map.
pub fn couple_gradients(grads: &mut RenderGradients) {
    for (c, g) in grads.sh_color.iter_mut().zip(&grads.sh_gray) {
        for ch in 0..3 {
            c[ch] += crate::gaussian::LUMA[ch] * g;
        }
    }
    grads.sh_gray.iter_mut().for_each(|g| *g = 0.0);
}
