//! Tiled forward compositing and its exact reverse pass.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::project::{project, splat_alpha, Appearance, Culled, ProjectedGaussian};
use super::{
    PoseGradient, RenderDiagnostics, RenderGradients, RenderMode, RenderOutput, RenderSettings,
    TILE_SIZE,
};
use crate::camera::CameraView;
use crate::error::{mismatch, Error, Result};
use crate::gaussian::{covariance_vjp, GaussianCloud};
use crate::image::{ColorImage, FluxImage, GrayImage};
use crate::sh;
use crate::sim::detection_probability_scalar;

/// Per-splat accumulator layout used by the reverse pass.
const D_MEAN_X: usize = 0;
const D_MEAN_Y: usize = 1;
const D_CONIC_A: usize = 2;
const D_CONIC_B: usize = 3;
const D_CONIC_C: usize = 4;
const D_OPACITY: usize = 5;
const D_RADIANCE: usize = 6;
const ACC_LEN: usize = 9;

/// One contribution that survived compositing at a pixel.
#[derive(Clone, Copy)]
struct Hit {
    local: usize,
    alpha: f64,
    gval: f64,
    clamped: bool,
    transmittance: f64,
}

/// A cloud projected into one view and binned into tiles. Holds everything the
/// forward and reverse passes need.
pub struct Rasterizer<'a> {
    cloud: &'a GaussianCloud,
    view: CameraView,
    mode: RenderMode,
    settings: RenderSettings,
    projected: Vec<ProjectedGaussian>,
    /// Per tile, indices into `projected` in compositing order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    diagnostics: RenderDiagnostics,
}

impl<'a> Rasterizer<'a> {
    pub fn new(
        cloud: &'a GaussianCloud,
        view: &CameraView,
        mode: RenderMode,
        settings: RenderSettings,
    ) -> Result<Self> {
        view.intrinsics.validate()?;
        if !view.pose.is_finite() {
            return Err(Error::InvalidParameter("camera pose is not finite".into()));
        }
        cloud.validate()?;
        let appearance = Appearance {
            mode,
            gray: cloud.gray,
        };
        let results: Vec<_> = cloud
            .gaussians
            .par_iter()
            .enumerate()
            .map(|(i, g)| project(g, i, view, appearance, settings.near, true))
            .collect();
        let mut diagnostics = RenderDiagnostics::default();
        let mut projected = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(p) => projected.push(p),
                Err(Culled::Degenerate) => {
                    diagnostics.degenerate += 1;
                    diagnostics.culled += 1;
                }
                Err(_) => diagnostics.culled += 1,
            }
        }
        diagnostics.visible = projected.len();

        let (w, h) = (view.width(), view.height());
        let tiles_x = w.div_ceil(TILE_SIZE);
        let tiles_y = h.div_ceil(TILE_SIZE);
        let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
        for (j, p) in projected.iter().enumerate() {
            let Some((x0, x1, y0, y1)) = pixel_bounds(p, w, h) else {
                continue;
            };
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tiles[ty * tiles_x + tx].push(j as u32);
                }
            }
        }
        tiles.par_iter_mut().for_each(|list| {
            list.sort_by(|&a, &b| {
                let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
                pa.depth
                    .total_cmp(&pb.depth)
                    .then(pa.parent_index.cmp(&pb.parent_index))
            })
        });

        Ok(Self {
            cloud,
            view: *view,
            mode,
            settings,
            projected,
            tiles,
            tiles_x,
            diagnostics,
        })
    }

    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.projected
    }

    pub fn diagnostics(&self) -> RenderDiagnostics {
        self.diagnostics
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (w, h) = (self.view.width(), self.view.height());
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w);
        let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }

    /// Walk the tile list at one pixel, calling `visit` for each surviving hit.
    /// Returns the final transmittance.
    fn composite(&self, list: &[u32], x: usize, y: usize, mut visit: impl FnMut(Hit, &ProjectedGaussian)) -> f64 {
        let (px, py) = (x as f64, y as f64);
        let mut t = 1.0;
        for (local, &j) in list.iter().enumerate() {
            let p = &self.projected[j as usize];
            let Some((alpha, gval, clamped)) = splat_alpha(p, px, py) else {
                continue;
            };
            let next = t * (1.0 - alpha);
            if next < self.settings.termination {
                break;
            }
            visit(
                Hit {
                    local,
                    alpha,
                    gval,
                    clamped,
                    transmittance: t,
                },
                p,
            );
            t = next;
        }
        t
    }

    pub fn forward(&self) -> RenderOutput {
        let (w, h) = (self.view.width(), self.view.height());
        let nc = self.mode.channels();
        // (radiance sum, depth numerator, weight sum, transmittance) per pixel
        let tile_results: Vec<Vec<(usize, [f64; 3], f64, f64, f64)>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                self.tile_pixels(tile)
                    .map(|(x, y)| {
                        let mut c = [0.0; 3];
                        let (mut num, mut wsum) = (0.0, 0.0);
                        let t = self.composite(list, x, y, |hit, p| {
                            let wk = hit.alpha * hit.transmittance;
                            for ch in 0..nc {
                                c[ch] += p.radiance[ch] * wk;
                            }
                            num += p.depth * wk;
                            wsum += wk;
                        });
                        (y * w + x, c, num, wsum, t)
                    })
                    .collect()
            })
            .collect();

        let mut radiance = vec![[0.0; 3]; w * h];
        let mut depth = GrayImage::new(w, h);
        let mut trans = GrayImage::new(w, h);
        for (idx, c, num, wsum, t) in tile_results.into_iter().flatten() {
            radiance[idx] = c;
            depth.data[idx] = if wsum > 0.0 { num / wsum } else { 0.0 };
            trans.data[idx] = t;
        }
        assemble_output(self.mode, radiance, depth, trans, self.diagnostics)
    }

    /// Gradients of `Σ upstream · primary_output`.
    pub fn backward(&self, upstream: &[f64]) -> Result<RenderGradients> {
        let (w, h) = (self.view.width(), self.view.height());
        let nc = self.mode.channels();
        if upstream.len() != w * h * nc {
            return Err(mismatch(w * h * nc, upstream.len()));
        }
        if let Some(i) = upstream.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("upstream gradient at index {i}")));
        }

        let tile_accs: Vec<Vec<[f64; ACC_LEN]>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| self.backward_tile(tile, upstream))
            .collect();

        // Deterministic reduction: tiles in index order.
        let mut acc = vec![[0.0; ACC_LEN]; self.projected.len()];
        for (tile, accs) in tile_accs.iter().enumerate() {
            for (local, a) in accs.iter().enumerate() {
                let dst = &mut acc[self.tiles[tile][local] as usize];
                for (d, s) in dst.iter_mut().zip(a) {
                    *d += s;
                }
            }
        }

        let per: Vec<SplatGrad> = self
            .projected
            .par_iter()
            .zip(acc.par_iter())
            .map(|(p, a)| self.splat_backward(p, a))
            .collect();

        let mut grads = RenderGradients::for_cloud(self.cloud);
        let k = grads.coeffs_per_channel;
        let mut camera = PoseGradient::default();
        for (p, s) in self.projected.iter().zip(per) {
            let i = p.parent_index;
            grads.position[i] = s.position;
            grads.log_scale[i] = s.log_scale;
            grads.rotation[i] = s.rotation;
            grads.opacity_logit[i] = s.opacity_logit;
            grads.mean2d[i] = s.mean2d;
            grads.visible[i] = true;
            if let Some(g) = s.sh_gray {
                grads.sh_gray[i * k..(i + 1) * k].copy_from_slice(&g);
            }
            if let Some(c) = s.sh_color {
                grads.sh_color[i * k..(i + 1) * k].copy_from_slice(&c);
            }
            camera.rotation += s.camera.rotation;
            camera.translation += s.camera.translation;
        }
        grads.camera = camera;
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient("render backward produced a non-finite value".into()));
        }
        Ok(grads)
    }

    fn backward_tile(&self, tile: usize, upstream: &[f64]) -> Vec<[f64; ACC_LEN]> {
        let list = &self.tiles[tile];
        let mut accs = vec![[0.0; ACC_LEN]; list.len()];
        if list.is_empty() {
            return accs;
        }
        let w = self.view.width();
        let nc = self.mode.channels();
        let mut hits: Vec<Hit> = Vec::with_capacity(list.len());
        for (x, y) in self.tile_pixels(tile) {
            let idx = y * w + x;
            hits.clear();
            let mut c = [0.0; 3];
            let (mut num, mut wsum) = (0.0, 0.0);
            self.composite(list, x, y, |hit, p| {
                let wk = hit.alpha * hit.transmittance;
                for ch in 0..nc {
                    c[ch] += p.radiance[ch] * wk;
                }
                num += p.depth * wk;
                wsum += wk;
                hits.push(hit);
            });
            if hits.is_empty() {
                continue;
            }

            // Upstream on the composited radiance channels and on Σw.
            let mut u = [0.0; 3];
            let mut u_ones = 0.0;
            match self.mode {
                RenderMode::Gray => {
                    if c[0] >= 0.0 {
                        u[0] = upstream[idx];
                    }
                }
                RenderMode::PhotonProb => {
                    if c[0] >= 0.0 {
                        u[0] = upstream[idx] * (-c[0]).exp();
                    }
                }
                RenderMode::Color => u.copy_from_slice(&upstream[3 * idx..3 * idx + 3]),
                RenderMode::Depth => {
                    if wsum > 0.0 {
                        u[0] = upstream[idx] / wsum;
                        u_ones = -upstream[idx] * (num / wsum) / wsum;
                    }
                }
            }
            if u == [0.0; 3] && u_ones == 0.0 {
                continue;
            }

            let (px, py) = (x as f64, y as f64);
            let mut suffix = [0.0; 3];
            let mut suffix_ones = 0.0;
            for hit in hits.iter().rev() {
                let p = &self.projected[list[hit.local] as usize];
                let a = &mut accs[hit.local];
                let wk = hit.alpha * hit.transmittance;
                let mut u_dot_v = u_ones;
                let mut u_dot_s = u_ones * suffix_ones;
                for ch in 0..nc {
                    u_dot_v += u[ch] * p.radiance[ch];
                    u_dot_s += u[ch] * suffix[ch];
                    a[D_RADIANCE + ch] += u[ch] * wk;
                    suffix[ch] += p.radiance[ch] * wk;
                }
                suffix_ones += wk;
                if hit.clamped {
                    continue;
                }
                let d_alpha = hit.transmittance * u_dot_v - u_dot_s / (1.0 - hit.alpha);
                a[D_OPACITY] += d_alpha * hit.gval;
                let d_power = d_alpha * p.opacity * hit.gval;
                let dx = px - p.mean2d.x;
                let dy = py - p.mean2d.y;
                let [ca, cb, cc] = p.conic;
                a[D_CONIC_A] += -0.5 * dx * dx * d_power;
                a[D_CONIC_B] += -dx * dy * d_power;
                a[D_CONIC_C] += -0.5 * dy * dy * d_power;
                a[D_MEAN_X] += d_power * (ca * dx + cb * dy);
                a[D_MEAN_Y] += d_power * (cb * dx + cc * dy);
            }
        }
        accs
    }

    /// Chain one splat's screen-space gradients back to its 3D parameters.
    fn splat_backward(&self, p: &ProjectedGaussian, a: &[f64; ACC_LEN]) -> SplatGrad {
        let g = &self.cloud.gaussians[p.parent_index];
        let cache = &p.cache;
        let k = &self.view.intrinsics;
        let w = self.view.pose.rotation_matrix();
        let (x, y, z) = (cache.p_cam.x, cache.p_cam.y, cache.p_cam.z);

        let mut d_pcam = Vector3::zeros();
        let mut d_world_pos = Vector3::zeros();
        let mut d_center = Vector3::zeros();

        // Appearance.
        let degree = self.cloud.sh_degree;
        let ncoef = sh::num_coeffs(degree);
        let mut sh_gray = None;
        let mut sh_color = None;
        let mut d_dir = Vector3::zeros();
        match self.mode {
            RenderMode::Gray | RenderMode::PhotonProb => {
                let (_, act) = self.cloud.gray.activate(cache.gray_pre);
                let d_pre = a[D_RADIANCE] * act;
                let (basis, bgrad) = sh::basis_with_grad(degree, &cache.view_dir);
                sh_gray = Some((0..ncoef).map(|j| d_pre * basis[j]).collect::<Vec<_>>());
                for j in 1..ncoef {
                    d_dir += Vector3::from(bgrad[j]) * (d_pre * g.sh_gray[j]);
                }
            }
            RenderMode::Color => {
                let (basis, bgrad) = sh::basis_with_grad(degree, &cache.view_dir);
                let d_rgb = [a[D_RADIANCE], a[D_RADIANCE + 1], a[D_RADIANCE + 2]];
                sh_color = Some(
                    (0..ncoef)
                        .map(|j| d_rgb.map(|d| d * basis[j]))
                        .collect::<Vec<_>>(),
                );
                for j in 1..ncoef {
                    let s: f64 = (0..3).map(|ch| d_rgb[ch] * g.sh_color[j][ch]).sum();
                    d_dir += Vector3::from(bgrad[j]) * s;
                }
            }
            RenderMode::Depth => d_pcam.z += a[D_RADIANCE],
        }
        if cache.view_dist > 0.0 && d_dir != Vector3::zeros() {
            let d = cache.view_dir;
            let d_offset = (d_dir - d * d.dot(&d_dir)) / cache.view_dist;
            d_world_pos += d_offset;
            d_center -= d_offset;
        }

        // Screen-space mean.
        let d_mean = Vector2::new(a[D_MEAN_X], a[D_MEAN_Y]);
        d_pcam.x += k.fx / z * d_mean.x;
        d_pcam.y += k.fy / z * d_mean.y;
        d_pcam.z -= (k.fx * x * d_mean.x + k.fy * y * d_mean.y) / (z * z);

        // Conic -> screen covariance -> camera covariance and Jacobian.
        let conic = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
        let g_conic = Matrix2::new(
            a[D_CONIC_A],
            0.5 * a[D_CONIC_B],
            0.5 * a[D_CONIC_B],
            a[D_CONIC_C],
        );
        let d_cov2d = -(conic * g_conic * conic);
        let jac = cache.jacobian;
        let d_cov_cam: Matrix3<f64> = jac.transpose() * d_cov2d * jac;
        let d_jac = 2.0 * d_cov2d * jac * cache.cov_cam;
        d_pcam.z += -k.fx / (z * z) * d_jac[(0, 0)] - k.fy / (z * z) * d_jac[(1, 1)];
        if cache.clamped_x {
            d_pcam.z += k.fx * cache.txtz / (z * z) * d_jac[(0, 2)];
        } else {
            d_pcam.x += -k.fx / (z * z) * d_jac[(0, 2)];
            d_pcam.z += 2.0 * k.fx * x / (z * z * z) * d_jac[(0, 2)];
        }
        if cache.clamped_y {
            d_pcam.z += k.fy * cache.tytz / (z * z) * d_jac[(1, 2)];
        } else {
            d_pcam.y += -k.fy / (z * z) * d_jac[(1, 2)];
            d_pcam.z += 2.0 * k.fy * y / (z * z * z) * d_jac[(1, 2)];
        }

        let d_cov_world = w.transpose() * d_cov_cam * w;
        let (log_scale, rotation) = covariance_vjp(&g.log_scale, g.rotation, &d_cov_world);

        d_world_pos += w.transpose() * d_pcam;

        // Camera increment p' = exp(φ) p + τ; the camera center only moves with τ.
        let kc = cache.cov_cam * d_cov_cam - d_cov_cam * cache.cov_cam;
        let cam_rot = cache.p_cam.cross(&d_pcam)
            + Vector3::new(
                kc[(1, 2)] - kc[(2, 1)],
                kc[(2, 0)] - kc[(0, 2)],
                kc[(0, 1)] - kc[(1, 0)],
            );
        let cam_trans = d_pcam - w * d_center;

        let o = p.opacity;
        SplatGrad {
            position: d_world_pos,
            log_scale,
            rotation,
            opacity_logit: a[D_OPACITY] * o * (1.0 - o),
            sh_gray,
            sh_color,
            mean2d: d_mean,
            camera: PoseGradient {
                rotation: cam_rot,
                translation: cam_trans,
            },
        }
    }
}

struct SplatGrad {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
    sh_gray: Option<Vec<f64>>,
    sh_color: Option<Vec<[f64; 3]>>,
    mean2d: Vector2<f64>,
    camera: PoseGradient,
}

/// Inclusive pixel bounding box of a splat's footprint, clipped to the image.
fn pixel_bounds(p: &ProjectedGaussian, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (p.mean2d.x - p.radius).ceil().max(0.0);
    let x1 = (p.mean2d.x + p.radius).floor().min(w as f64 - 1.0);
    let y0 = (p.mean2d.y - p.radius).ceil().max(0.0);
    let y1 = (p.mean2d.y + p.radius).floor().min(h as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Turn composited per-pixel sums into the mode's output images.
pub(super) fn assemble_output(
    mode: RenderMode,
    radiance: Vec<[f64; 3]>,
    depth: GrayImage,
    transmittance: GrayImage,
    diagnostics: RenderDiagnostics,
) -> RenderOutput {
    let (w, h) = (depth.width, depth.height);
    let mut out = RenderOutput {
        mode,
        flux: None,
        prob: None,
        color: None,
        depth,
        transmittance,
        diagnostics,
    };
    match mode {
        RenderMode::Gray | RenderMode::PhotonProb => {
            let data = radiance.iter().map(|c| c[0].max(0.0)).collect();
            let flux = FluxImage::new(GrayImage { width: w, height: h, data })
                .expect("composited flux is finite and nonnegative");
            if mode == RenderMode::PhotonProb {
                out.prob = Some(flux.as_image().map(detection_probability_scalar));
            }
            out.flux = Some(flux);
        }
        RenderMode::Color => {
            out.color = Some(ColorImage {
                width: w,
                height: h,
                rgb: radiance,
            })
        }
        RenderMode::Depth => {}
    }
    out
}
