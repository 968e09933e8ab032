//! Image quality and multi-view color consistency.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::CameraView;
use crate::error::{mismatch, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::{ColorImage, GrayImage};
use crate::render::{render, RenderMode};

pub use crate::losses::ssim;

/// Returned when the mean squared error is below `1e-10`.
pub const PSNR_CAP: f64 = 100.0;
/// Relative depth disagreement above which a reprojected pixel counts as occluded.
pub const OCCLUSION_TOLERANCE: f64 = 0.05;
/// Pixels with at least this accumulated opacity have a usable depth.
pub const COVERAGE_THRESHOLD: f64 = 0.5;
/// Reprojected coordinates this close to a pixel center are snapped onto it.
const SNAP: f64 = 1e-6;

/// Peak signal-to-noise ratio in dB over two equally long sample vectors.
pub fn psnr_slices(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(mismatch(format!("{} samples", a.len()), format!("{} samples", b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("psnr of empty images".into()));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse.is_nan() {
        return Err(Error::InvalidInput("psnr of non-finite images".into()));
    }
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64> {
    a.same_shape(b)?;
    psnr_slices(&a.data, &b.data, peak)
}

pub fn psnr_color(a: &ColorImage, b: &ColorImage, peak: f64) -> Result<f64> {
    a.same_shape(b)?;
    psnr_slices(a.flat(), b.flat(), peak)
}

/// Mean PSNR and SSIM over a set of image pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualitySummary {
    pub psnr: f64,
    pub ssim: f64,
    pub images: usize,
}

pub fn gray_quality(pred: &[GrayImage], truth: &[GrayImage]) -> Result<QualitySummary> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(mismatch(format!("{} images", truth.len()), format!("{} images", pred.len())));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        p += psnr(a, b, 1.0)?;
        s += ssim(a, b)?;
    }
    let n = pred.len() as f64;
    Ok(QualitySummary { psnr: p / n, ssim: s / n, images: pred.len() })
}

/// Gray renders of `cloud` divided by `flux_per_unit`, comparable with
/// normalized intensity images.
pub fn normalized_gray_renders(cloud: &GaussianCloud, views: &[CameraView], flux_per_unit: f64) -> Result<Vec<GrayImage>> {
    views
        .iter()
        .map(|v| {
            let f = render(cloud, v, RenderMode::Gray)?.flux.expect("gray render");
            Ok(f.as_image().map(|x| x / flux_per_unit))
        })
        .collect()
}

/// Per-pixel values, depth and coverage of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub depth: GrayImage,
    pub coverage: GrayImage,
}

impl ViewSample {
    /// Render `cloud` at `view` in `mode` (gray or color) together with its depth.
    pub fn render(cloud: &GaussianCloud, view: &CameraView, mode: RenderMode) -> Result<Self> {
        let out = render(cloud, view, mode)?;
        let (channels, values) = match mode {
            RenderMode::Color => (3, out.color.as_ref().expect("color render").flat().to_vec()),
            RenderMode::Gray => (1, out.flux.as_ref().expect("gray render").lambda().to_vec()),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "consistency needs a gray or color render, got {other:?}"
                )))
            }
        };
        Ok(Self {
            width: view.width(),
            height: view.height(),
            channels,
            values,
            coverage: out.transmittance.map(|t| 1.0 - t),
            depth: out.depth,
        })
    }

    /// The same sample with its color replaced by `image`.
    pub fn with_color(&self, image: &ColorImage) -> Result<Self> {
        if image.width != self.width || image.height != self.height {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", image.width, image.height),
            ));
        }
        Ok(Self { channels: 3, values: image.flat().to_vec(), ..self.clone() })
    }

    fn covered(&self, idx: usize) -> bool {
        self.coverage.data[idx] > COVERAGE_THRESHOLD && self.depth.data[idx] > 0.0
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers on integers).
    fn bilinear(&self, data: &[f64], stride: usize, c: usize, x: f64, y: f64) -> f64 {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| data[(yy * self.width + xx) * stride + c];
        (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1))
    }
}

/// Masked reprojection error between two views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    /// Root mean squared difference over valid pixels and channels. Zero when
    /// nothing is valid.
    pub rmse: f64,
    /// Valid pixels divided by the covered pixels of the first view.
    pub valid_fraction: f64,
    pub valid_pixels: usize,
    /// True when no pixel survived the mask.
    pub empty: bool,
}

/// Warp every covered pixel of `a` into `b` through `a`'s depth and compare
/// with `b` sampled bilinearly. Pixels landing outside `b`, on uncovered
/// parts of `b`, or whose depth in `b` disagrees by more than
/// [`OCCLUSION_TOLERANCE`] are masked out.
pub fn consistency_between(a: &ViewSample, view_a: &CameraView, b: &ViewSample, view_b: &CameraView) -> Result<Consistency> {
    if a.channels != b.channels {
        return Err(mismatch(format!("{} channels", a.channels), format!("{} channels", b.channels)));
    }
    for (s, v) in [(a, view_a), (b, view_b)] {
        if s.width != v.width() || s.height != v.height() {
            return Err(mismatch(
                format!("{}x{}", v.width(), v.height()),
                format!("{}x{}", s.width, s.height),
            ));
        }
    }
    let to_world: Matrix3<f64> = view_a.pose.rotation_matrix().transpose();
    let ch = a.channels;
    let mut sq = 0.0;
    let mut valid = 0usize;
    let mut covered = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            let idx = y * a.width + x;
            if !a.covered(idx) {
                continue;
            }
            covered += 1;
            let z = a.depth.data[idx];
            let p_cam = view_a.intrinsics.unproject(&Vector2::new(x as f64, y as f64), z);
            let world: Vector3<f64> = to_world * (p_cam - view_a.pose.translation);
            let q_cam = view_b.pose.transform_point(&world);
            if q_cam.z <= 0.0 {
                continue;
            }
            let mut q = view_b.intrinsics.project(&q_cam);
            for c in q.iter_mut() {
                if (*c - c.round()).abs() < SNAP {
                    *c = c.round();
                }
            }
            if q.x < 0.0 || q.y < 0.0 || q.x > (b.width - 1) as f64 || q.y > (b.height - 1) as f64 {
                continue;
            }
            if b.bilinear(&b.coverage.data, 1, 0, q.x, q.y) <= COVERAGE_THRESHOLD {
                continue;
            }
            let zb = b.bilinear(&b.depth.data, 1, 0, q.x, q.y);
            if (zb - q_cam.z).abs() > OCCLUSION_TOLERANCE * q_cam.z {
                continue;
            }
            for c in 0..ch {
                let d = a.values[idx * ch + c] - b.bilinear(&b.values, ch, c, q.x, q.y);
                sq += d * d;
            }
            valid += 1;
        }
    }
    Ok(Consistency {
        rmse: if valid > 0 { (sq / (valid * ch) as f64).sqrt() } else { 0.0 },
        valid_fraction: if covered > 0 { valid as f64 / covered as f64 } else { 0.0 },
        valid_pixels: valid,
        empty: valid == 0,
    })
}

/// Render both views of `cloud` in `mode` and measure their consistency.
pub fn view_consistency(
    cloud: &GaussianCloud,
    view_a: &CameraView,
    view_b: &CameraView,
    mode: RenderMode,
) -> Result<Consistency> {
    let a = ViewSample::render(cloud, view_a, mode)?;
    let b = ViewSample::render(cloud, view_b, mode)?;
    consistency_between(&a, view_a, &b, view_b)
}

/// For each view, its nearest neighbor (short range) and its farthest other
/// view (long range) by camera center distance. Pairs are `(i, j)` with `i < j`
/// and listed once.
pub fn view_pairs(views: &[CameraView]) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.center()).collect();
    let mut short = Vec::new();
    let mut long = Vec::new();
    for i in 0..views.len() {
        let others = (0..views.len()).filter(|&j| j != i);
        let dist = |j: &usize| (centers[i] - centers[*j]).norm();
        let near = others.clone().min_by(|a, b| dist(a).total_cmp(&dist(b)));
        let far = others.max_by(|a, b| dist(a).total_cmp(&dist(b)));
        for (list, j) in [(&mut short, near), (&mut long, far)] {
            if let Some(j) = j {
                let pair = (i.min(j), i.max(j));
                if !list.contains(&pair) {
                    list.push(pair);
                }
            }
        }
    }
    (short, long)
}

/// Rotate hue by `angle` radians around the gray axis of RGB space. Gray
/// pixels are unchanged.
pub fn hue_rotate(image: &ColorImage, angle: f64) -> ColorImage {
    let axis = Vector3::repeat(1.0 / 3f64.sqrt());
    let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle);
    let rgb = image
        .rgb
        .iter()
        .map(|p| {
            let v = r * Vector3::from(*p);
            [v.x, v.y, v.z]
        })
        .collect();
    ColorImage { width: image.width, height: image.height, rgb }
}
