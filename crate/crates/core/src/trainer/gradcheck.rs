//! Finite-difference verification of the analytic gradients on a random scene.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stage2::{stage2_gradients, BlurTrajectory, Knot};
use crate::camera::{CameraIntrinsics, CameraPose, CameraView};
use crate::error::Result;
use crate::gaussian::{couple_color_to_gray, logit, Gaussian, GaussianCloud, GrayRadiance};
use crate::image::{BinaryFrame, ColorImage, GrayImage};
use crate::losses::{l1_loss, photon_loss, smooth_loss};
use crate::render::{render, render_backward, RenderGradients, RenderMode};
use crate::sh::num_coeffs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckLoss {
    /// BCE of the photon-probability render against a binary frame.
    Photon,
    /// L1 of the gray render against a target flux image.
    Gray,
    /// Blurred color loss over two knots, including the knot parameters.
    Color,
    /// Translation-jitter smoothing term.
    Smooth,
}

impl std::str::FromStr for GradcheckLoss {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "photon" => Ok(Self::Photon),
            "gray" => Ok(Self::Gray),
            "color" => Ok(Self::Color),
            "smooth" => Ok(Self::Smooth),
            other => Err(crate::error::Error::InvalidParameter(format!(
                "unknown loss `{other}` (expected photon, gray, color or smooth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: &'static str,
    pub parameters: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    /// Parameters whose finite difference needed a smaller step.
    pub reduced_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: GradcheckLoss,
    pub groups: Vec<GroupError>,
}

impl fmt::Display for GradcheckLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Photon => "photon",
            Self::Gray => "gray",
            Self::Color => "color",
            Self::Smooth => "smooth",
        })
    }
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loss,group,parameters,max_rel_error,max_abs_grad,reduced_steps")?;
        for g in &self.groups {
            writeln!(
                f,
                "{},{},{},{:.3e},{:.3e},{}",
                self.loss, g.group, g.parameters, g.max_rel_error, g.max_abs_grad, g.reduced_steps
            )?;
        }
        Ok(())
    }
}

/// Largest step for central differences; it shrinks tenfold, at most twice,
/// until consecutive estimates agree.
const FD_STEP: f64 = 1e-5;
/// Consecutive estimates agree when they differ by less than this fraction of
/// their magnitude plus the round-off of both.
const FD_AGREE: f64 = 1e-4;
/// Relative errors are measured against `max(|a|, |n|, RELATIVE_FLOOR * group max)`.
const RELATIVE_FLOOR: f64 = 1e-4;

/// Central difference of `f` at zero. The alpha skip threshold and early
/// termination make the loss piecewise smooth, and a step that straddles one
/// of their jumps measures the jump instead of the slope. The step is reduced
/// until two consecutive estimates agree; the flag reports whether it was.
fn converged_difference(f: impl Fn(f64) -> Result<f64>) -> Result<(f64, bool)> {
    // (estimate, round-off bound)
    let central = |h: f64| -> Result<(f64, f64)> {
        let (p, m) = (f(h)?, f(-h)?);
        Ok(((p - m) / (2.0 * h), 16.0 * f64::EPSILON * p.abs().max(m.abs()) / h))
    };
    let mut h = FD_STEP;
    let mut prev = central(h)?;
    for reduction in 0..2 {
        let next = central(h / 10.0)?;
        if (prev.0 - next.0).abs() <= FD_AGREE * prev.0.abs().max(next.0.abs()) + prev.1 + next.1 {
            return Ok((prev.0, reduction > 0));
        }
        h /= 10.0;
        prev = next;
    }
    Ok((prev.0, true))
}

/// A random cloud of `n` Gaussians in front of a camera looking at the origin.
pub fn random_scene(n: usize, width: u32, height: u32, seed: u64) -> Result<(GaussianCloud, CameraView)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = 2;
    let k = num_coeffs(degree);
    let mut cloud = GaussianCloud::new(degree);
    for _ in 0..n {
        let mut q = [
            rng.gen_range(0.3..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        let sh_color: Vec<[f64; 3]> = (0..k)
            .map(|j| {
                let amp = if j == 0 { 0.8 } else { 0.25 };
                [0, 1, 2].map(|_| rng.gen_range(-amp..amp))
            })
            .collect();
        let mut sh_gray: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.3..0.3)).collect();
        sh_gray[0] = rng.gen_range(-1.5..1.5);
        cloud.push(Gaussian {
            position: Vector3::new(
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.5..0.5),
            ),
            log_scale: Vector3::from_fn(|_, _| rng.gen_range(-2.3..-1.2)),
            rotation: q,
            opacity_logit: logit(rng.gen_range(0.3..0.85)),
            sh_gray,
            sh_color,
        })?;
    }
    let k = CameraIntrinsics::centered(0.9 * width as f64, width, height)?;
    let pose = CameraPose::look_at(
        Vector3::new(0.3, -0.2, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    )?;
    Ok((cloud, CameraView::new(k, pose)))
}

struct Problem {
    loss: GradcheckLoss,
    view: CameraView,
    frame: BinaryFrame,
    gray_target: GrayImage,
    color_target: ColorImage,
    smooth_seed: u64,
}

impl Problem {
    /// Loss value, per-Gaussian gradients and knot gradients.
    fn evaluate(&self, cloud: &GaussianCloud, knots: &BlurTrajectory) -> Result<(f64, RenderGradients, Vec<[f64; 6]>)> {
        match self.loss {
            GradcheckLoss::Photon => {
                let p = render(cloud, &self.view, RenderMode::PhotonProb)?.prob.expect("prob");
                let l = photon_loss(&p, &self.frame)?;
                let g = render_backward(cloud, &self.view, RenderMode::PhotonProb, &l.pixel_grad)?;
                Ok((l.value, g, Vec::new()))
            }
            GradcheckLoss::Gray => {
                let f = render(cloud, &self.view, RenderMode::Gray)?.flux.expect("flux");
                let l = l1_loss(f.as_image(), &self.gray_target)?;
                let g = render_backward(cloud, &self.view, RenderMode::Gray, &l.pixel_grad)?;
                Ok((l.value, g, Vec::new()))
            }
            GradcheckLoss::Smooth => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.smooth_seed);
                let s = smooth_loss(cloud, &self.view, 0.05, 3, &mut rng, false)?;
                Ok((s.loss.value, s.gradients, Vec::new()))
            }
            GradcheckLoss::Color => stage2_gradients(cloud, knots, &self.color_target, &self.view, 0.2),
        }
    }
}

fn flat_params(g: &Gaussian) -> Vec<f64> {
    let mut v: Vec<f64> = g.position.iter().chain(g.log_scale.iter()).copied().collect();
    v.extend(g.rotation);
    v.push(g.opacity_logit);
    v.extend(&g.sh_gray);
    v.extend(g.sh_color.iter().flatten());
    v
}

fn nudge(g: &mut Gaussian, p: usize, delta: f64) {
    let k = g.sh_gray.len();
    match p {
        0..=2 => g.position[p] += delta,
        3..=5 => g.log_scale[p - 3] += delta,
        6..=9 => g.rotation[p - 6] += delta,
        10 => g.opacity_logit += delta,
        _ if p < 11 + k => g.sh_gray[p - 11] += delta,
        _ => {
            let q = p - 11 - k;
            g.sh_color[q / 3][q % 3] += delta;
        }
    }
}

fn group_of(p: usize, k: usize) -> &'static str {
    match p {
        0..=2 => "position",
        3..=5 => "log_scale",
        6..=9 => "rotation",
        10 => "opacity",
        _ if p < 11 + k => "sh_gray",
        _ => "sh_color",
    }
}

/// Compare analytic gradients of `loss` with central finite differences on a
/// random `num_gaussians`-Gaussian scene rendered at `width x height`.
pub fn gradcheck(
    num_gaussians: usize,
    width: u32,
    height: u32,
    seed: u64,
    loss: GradcheckLoss,
) -> Result<GradcheckReport> {
    let (mut cloud, view) = random_scene(num_gaussians, width, height, seed)?;
    if loss == GradcheckLoss::Color {
        cloud.gray = GrayRadiance::Coupled { flux_scale: 0.3 };
        for g in &mut cloud.gaussians {
            g.sh_gray = couple_color_to_gray(&g.sh_color);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (w, h) = (width as usize, height as usize);
    let bits: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.3)).collect();
    let problem = Problem {
        loss,
        view,
        frame: BinaryFrame::from_bits(w, h, &bits)?,
        gray_target: GrayImage::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(0.0..2.0)).collect())?,
        color_target: ColorImage::from_vec(
            w,
            h,
            (0..w * h).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect(),
        )?,
        smooth_seed: rng.gen(),
    };
    let knots = BlurTrajectory {
        knots: vec![
            Knot::from_array([0.01, -0.02, 0.015, 0.03, -0.01, 0.02]),
            Knot::from_array([-0.015, 0.01, -0.01, -0.02, 0.025, -0.01]),
        ],
    };

    let (_, grads, knot_grads) = problem.evaluate(&cloud, &knots)?;
    let k = cloud.coeffs_per_channel();
    let skip = match loss {
        GradcheckLoss::Color => "sh_gray",
        _ => "sh_color",
    };

    // (group, analytic, numeric, step reduced)
    let mut samples: Vec<(&'static str, f64, f64, bool)> = Vec::new();
    for i in 0..cloud.len() {
        let analytic = grads.flatten_gaussian(i);
        for p in 0..flat_params(&cloud.gaussians[i]).len() {
            let group = group_of(p, k);
            if group == skip {
                continue;
            }
            let eval = |delta: f64| -> Result<f64> {
                let mut c = cloud.clone();
                nudge(&mut c.gaussians[i], p, delta);
                if loss == GradcheckLoss::Color && group == "sh_color" {
                    c.sync_gray_from_color();
                }
                Ok(problem.evaluate(&c, &knots)?.0)
            };
            let (numeric, reduced) = converged_difference(eval)?;
            samples.push((group, analytic[p], numeric, reduced));
        }
    }
    if loss == GradcheckLoss::Color {
        for (j, kg) in knot_grads.iter().enumerate() {
            for c in 0..6 {
                let eval = |delta: f64| -> Result<f64> {
                    let mut t = knots.clone();
                    let mut a = t.knots[j].as_array();
                    a[c] += delta;
                    t.knots[j] = Knot::from_array(a);
                    Ok(problem.evaluate(&cloud, &t)?.0)
                };
                let (numeric, reduced) = converged_difference(eval)?;
                samples.push(("trajectory", kg[c], numeric, reduced));
            }
        }
    }

    let mut groups: Vec<GroupError> = Vec::new();
    for name in ["position", "log_scale", "rotation", "opacity", "sh_gray", "sh_color", "trajectory"] {
        let members: Vec<&(&str, f64, f64, bool)> = samples.iter().filter(|s| s.0 == name).collect();
        if members.is_empty() {
            continue;
        }
        let max_abs = members.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
        let floor = (RELATIVE_FLOOR * max_abs).max(1e-12);
        let max_rel = members
            .iter()
            .map(|s| (s.1 - s.2).abs() / s.1.abs().max(s.2.abs()).max(floor))
            .fold(0.0, f64::max);
        groups.push(GroupError {
            group: name,
            parameters: members.len(),
            max_rel_error: max_rel,
            max_abs_grad: max_abs,
            reduced_steps: members.iter().filter(|s| s.3).count(),
        });
    }
    Ok(GradcheckReport { loss, groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn photon_gradients_check_out() {
        let r = gradcheck(4, 24, 20, 1, GradcheckLoss::Photon).unwrap();
        assert!(r.max_rel_error() < 1e-3, "{r}");
        assert_eq!(r.groups.len(), 5);
    }
}
