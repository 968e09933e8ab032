//! Single-photon sensor simulation: flux scaling, photon arrival and thresholding.
//!
//! A pixel with rate `λ` fires (reads 1) when at least one photon arrives, which
//! happens with probability `1 - exp(-λ)`. Frames are seeded per `(seed, view, frame)`
//! so the output does not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{mismatch, Error, Result};
use crate::image::{BinaryFrame, FluxImage, GrayImage};

/// Mean detection rate reported for real captures.
pub const REAL_CAPTURE_DETECTION_RATE: f64 = 0.122;

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Multiplies normalized intensity to give the expected photon count per exposure.
    pub flux_gain: f64,
    /// Added to every pixel's rate.
    pub dark_count_rate: f64,
    /// Fraction of pixels that never fire.
    pub dead_pixel_fraction: f64,
    pub seed: u64,
    /// Sample a Poisson count and threshold it instead of drawing the Bernoulli directly.
    pub poisson_reference: bool,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            flux_gain: gain_for_detection_rate(REAL_CAPTURE_DETECTION_RATE),
            dark_count_rate: 0.0,
            dead_pixel_fraction: 0.0,
            seed: 0,
            poisson_reference: false,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.flux_gain > 0.0 && self.flux_gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "flux_gain must be positive, got {}",
                self.flux_gain
            )));
        }
        if !(self.dark_count_rate >= 0.0 && self.dark_count_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dark_count_rate must be nonnegative, got {}",
                self.dark_count_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dead_pixel_fraction) {
            return Err(Error::InvalidParameter(format!(
                "dead_pixel_fraction must be in [0, 1), got {}",
                self.dead_pixel_fraction
            )));
        }
        Ok(())
    }
}

/// Gain that makes a uniformly white image fire with probability `rate`.
pub fn gain_for_detection_rate(rate: f64) -> f64 {
    -(-rate).ln_1p()
}

/// `λ = gain * I + dark`.
pub fn intensity_to_flux(image: &GrayImage, config: &SensorConfig) -> Result<FluxImage> {
    config.validate()?;
    if let Some((i, v)) = image
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
    {
        return Err(Error::InvalidInput(format!(
            "intensity must be a finite value in [0, 1], pixel {i} is {v}"
        )));
    }
    FluxImage::new(image.map(|v| config.flux_gain * v + config.dark_count_rate))
}

/// `1 - exp(-λ)`, kept strictly below one.
pub fn detection_probability_scalar(lambda: f64) -> f64 {
    (-(-lambda).exp_m1()).min(BELOW_ONE)
}

pub fn detection_probability(flux: &FluxImage) -> GrayImage {
    flux.as_image().map(detection_probability_scalar)
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5A5A_1234_ABCD_0F0F, |acc, &p| mix_seed(acc ^ mix_seed(p)))
}

/// A sensor of fixed size with its dead-pixel map.
#[derive(Debug, Clone)]
pub struct Sensor {
    config: SensorConfig,
    width: usize,
    height: usize,
    dead: Vec<bool>,
}

impl Sensor {
    pub fn new(config: SensorConfig, width: usize, height: usize) -> Result<Self> {
        config.validate()?;
        let n = width * height;
        let mut dead = vec![false; n];
        if config.dead_pixel_fraction > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, u64::MAX]));
            for d in dead.iter_mut() {
                *d = rng.gen::<f64>() < config.dead_pixel_fraction;
            }
        }
        Ok(Self {
            config,
            width,
            height,
            dead,
        })
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn dead_pixels(&self) -> &[bool] {
        &self.dead
    }

    /// Draw one frame using the given generator.
    pub fn sample_with<R: Rng>(&self, flux: &FluxImage, rng: &mut R) -> Result<BinaryFrame> {
        if flux.width() != self.width || flux.height() != self.height {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", flux.width(), flux.height()),
            ));
        }
        let mut frame = BinaryFrame::new(self.width, self.height);
        let lambda = flux.lambda();
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let fired = if self.config.poisson_reference {
                    lambda[i] > 0.0
                        && Poisson::new(lambda[i])
                            .map(|p| p.sample(rng) >= 1.0)
                            .unwrap_or(false)
                } else {
                    let p = detection_probability_scalar(lambda[i]);
                    p > 0.0 && rng.gen::<f64>() < p
                };
                if fired && !self.dead[i] {
                    frame.set(x, y, true);
                }
            }
        }
        Ok(frame)
    }

    /// Deterministic frame for `(seed, view, frame)`.
    pub fn sample_frame(&self, flux: &FluxImage, view: u64, frame: u64) -> Result<BinaryFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, view, frame]));
        self.sample_with(flux, &mut rng)
    }

    /// `count` consecutive frames of one view, sampled in parallel.
    pub fn sample_frames(&self, flux: &FluxImage, view: u64, count: usize) -> Result<Vec<BinaryFrame>> {
        (0..count as u64)
            .into_par_iter()
            .map(|f| self.sample_frame(flux, view, f))
            .collect()
    }
}

/// Convenience wrapper: one Bernoulli frame with no dead pixels.
pub fn sample_binary_frame<R: Rng>(flux: &FluxImage, rng: &mut R) -> BinaryFrame {
    let sensor = Sensor::new(
        SensorConfig {
            flux_gain: 1.0,
            ..Default::default()
        },
        flux.width(),
        flux.height(),
    )
    .expect("default sensor config is valid");
    sensor
        .sample_with(flux, rng)
        .expect("sensor built from flux dimensions")
}

/// Per-pixel mean of frames followed by a `window x window` median filter.
pub fn average_frames(frames: &[BinaryFrame], median_window: usize) -> Result<GrayImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one frame is required".into()))?;
    if median_window == 0 || median_window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "median window must be odd, got {median_window}"
        )));
    }
    let (w, h) = (first.width(), first.height());
    let mut counts = vec![0u32; w * h];
    for f in frames {
        if f.width() != w || f.height() != h {
            return Err(mismatch(
                format!("{w}x{h}"),
                format!("{}x{}", f.width(), f.height()),
            ));
        }
        for y in 0..h {
            for x in 0..w {
                if f.get(x, y) {
                    counts[y * w + x] += 1;
                }
            }
        }
    }
    let n = frames.len() as f64;
    let mean = GrayImage::from_vec(w, h, counts.iter().map(|&c| c as f64 / n).collect())?;
    Ok(median_filter(&mean, median_window))
}

/// Median filter with edge clamping.
pub fn median_filter(image: &GrayImage, window: usize) -> GrayImage {
    if window <= 1 {
        return image.clone();
    }
    let r = (window / 2) as isize;
    let (w, h) = (image.width as isize, image.height as isize);
    let mut out = GrayImage::new(image.width, image.height);
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    buf.push(image.get(xx, yy));
                }
            }
            buf.sort_by(f64::total_cmp);
            out.set(x as usize, y as usize, buf[buf.len() / 2]);
        }
    }
    out
}

/// Frames captured at one view.
#[derive(Debug, Clone)]
pub struct CapturedView {
    pub view: CameraView,
    pub frames: Vec<BinaryFrame>,
}

/// Turn ground-truth intensity images into binary frame sequences.
pub fn simulate_capture(
    scene: &[(GrayImage, CameraView)],
    config: &SensorConfig,
    frames_per_view: usize,
) -> Result<Vec<CapturedView>> {
    config.validate()?;
    if frames_per_view == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(scene.len());
    for (vi, (image, view)) in scene.iter().enumerate() {
        if image.width != view.width() || image.height != view.height() {
            return Err(mismatch(
                format!("{}x{} (intrinsics)", view.width(), view.height()),
                format!("{}x{} (image {vi})", image.width, image.height),
            ));
        }
        // same seed and size give the same dead-pixel map for every view
        let sensor = Sensor::new(*config, image.width, image.height)?;
        let flux = intensity_to_flux(image, config)?;
        let frames = sensor.sample_frames(&flux, vi as u64, frames_per_view)?;
        out.push(CapturedView {
            view: *view,
            frames,
        });
    }
    Ok(out)
}

/// Gain giving a mean detection probability of `target` over all pixels of `images`.
pub fn calibrate_gain(images: &[GrayImage], dark_count_rate: f64, target: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&target) || target == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "target detection rate must be in (0, 1), got {target}"
        )));
    }
    let total: usize = images.iter().map(|im| im.data.len()).sum();
    if total == 0 {
        return Err(Error::InvalidInput("no pixels to calibrate on".into()));
    }
    let rate = |gain: f64| {
        images
            .iter()
            .flat_map(|im| im.data.iter())
            .map(|&v| detection_probability_scalar(gain * v + dark_count_rate))
            .sum::<f64>()
            / total as f64
    };
    if rate(0.0) >= target {
        return Err(Error::InvalidParameter(
            "dark counts alone exceed the target detection rate".into(),
        ));
    }
    let mut hi = 1.0;
    while rate(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidInput(
                "images are too dark to reach the target detection rate".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
