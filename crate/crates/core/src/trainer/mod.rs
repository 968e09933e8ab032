//! Two-stage optimization: geometry and gray radiance from binary frames, then
//! color from a single blurred reference image.

mod adam;
mod density;
mod gradcheck;
mod stage2;

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, Moments};
pub use density::{densify_and_prune, DensifyReport};
pub use gradcheck::{gradcheck, random_scene, GradcheckLoss, GradcheckReport, GroupError};
pub use stage2::{
    couple_gradients, keep_color_nonnegative, prepare_for_colorization, stage2_colorize, stage2_step, BlurTrajectory,
    ColorizeState, Knot,
};

use crate::camera::CameraView;
use crate::error::{mismatch, Error, Result};
use crate::gaussian::{logit, Gaussian, GaussianCloud, GrayRadiance};
use crate::image::{BinaryFrame, GrayImage};
use crate::losses::{l1_loss, photon_loss, smooth_loss, Stage1Weights};
use crate::render::{render, render_backward, RenderGradients, RenderMode};
use crate::sh;
use crate::sim::{average_frames, derive_seed};

/// Per-group step sizes. Position rates are multiplied by the scene extent and
/// decay exponentially from `position_init` to `position_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    /// DC coefficient of the gray SH.
    pub sh_gray: f64,
    /// DC coefficients of the color SH.
    pub sh_color: f64,
    /// Higher SH bands use the DC rate divided by this.
    pub sh_rest_divisor: f64,
    pub trajectory: f64,
    /// Stage-2 rates decay to this fraction of their initial value.
    pub stage2_final_fraction: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh_gray: 1e-2,
            sh_color: 5e-3,
            sh_rest_divisor: 20.0,
            trajectory: 1e-3,
            stage2_final_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub interval: u64,
    pub start_iter: u64,
    pub stop_iter: u64,
    /// Threshold on the mean screen-space positional gradient, in normalized
    /// device units (pixels scaled by half the image size). Single binary
    /// frames make these norms noisy, so the default sits well above the
    /// usual value for averaged-image losses.
    pub grad_threshold: f64,
    /// Gaussians with max scale at most this fraction of the scene extent are
    /// cloned; larger ones are split.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
    pub split_factor: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            interval: 500,
            start_iter: 500,
            stop_iter: 12_000,
            grad_threshold: 2e-3,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 20_000,
            split_factor: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub smooth_start_iter: u64,
    pub sigma_smooth: f64,
    pub num_perturbed: usize,
    pub gamma: f64,
    pub m_blur: usize,
    pub stage2_iters: u64,
    pub sh_degree: usize,
    pub seed: u64,
    pub init_opacity: f64,
    /// Fallback initial scale when a point has no neighbors.
    pub init_scale: f64,
    pub weights: Stage1Weights,
    /// Stop gradients through the perturbed branch of the smoothing term.
    pub smooth_stop_grad_mean: bool,
    /// Train against `window`-frame averages with L1 instead of single frames with BCE.
    pub baseline_window: Option<usize>,
    pub lr: LearningRates,
    pub density: DensityConfig,
    pub adam: AdamConfig,
    /// Standard deviation of the initial knot offsets, which breaks the exchange
    /// symmetry between knots.
    pub knot_jitter: f64,
    /// Keep blur knots at the identity during colorization.
    pub pin_knots: bool,
    /// World-space scene size; derived from the camera centers when absent.
    pub scene_extent: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 20_000,
            smooth_start_iter: 15_000,
            sigma_smooth: 5e-4,
            num_perturbed: 3,
            gamma: 0.2,
            m_blur: 4,
            stage2_iters: 2_000,
            sh_degree: crate::gaussian::DEFAULT_SH_DEGREE,
            seed: 0,
            init_opacity: 0.1,
            init_scale: 0.05,
            weights: Stage1Weights::default(),
            smooth_stop_grad_mean: false,
            baseline_window: None,
            lr: LearningRates::default(),
            density: DensityConfig::default(),
            adam: AdamConfig::default(),
            knot_jitter: 1e-4,
            pin_knots: false,
            scene_extent: None,
        }
    }
}

impl TrainConfig {
    /// The default schedule compressed to `total_iters`, keeping every
    /// iteration-based milestone at the same fraction of the run. The
    /// densification interval does not drop below 50.
    pub fn scaled(total_iters: u64) -> Self {
        let d = Self::default();
        let f = |v: u64| ((v as f64) * total_iters as f64 / d.total_iters as f64).round() as u64;
        Self {
            total_iters,
            smooth_start_iter: f(d.smooth_start_iter),
            density: DensityConfig {
                // fewer than ~50 accumulated gradients per decision is mostly photon noise
                interval: f(d.density.interval).max(50),
                start_iter: f(d.density.start_iter),
                stop_iter: f(d.density.stop_iter),
                ..d.density
            },
            ..d
        }
    }

    /// The 5000-iteration desk-scale schedule.
    pub fn desk_scale() -> Self {
        Self::scaled(5_000)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.smooth_start_iter > self.total_iters {
            return bad(format!(
                "smooth_start_iter {} exceeds total_iters {}",
                self.smooth_start_iter, self.total_iters
            ));
        }
        if self.m_blur == 0 {
            return bad("m_blur must be at least 1".into());
        }
        if self.num_perturbed == 0 {
            return bad("num_perturbed must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(self.sigma_smooth >= 0.0) {
            return bad(format!("sigma_smooth must be >= 0, got {}", self.sigma_smooth));
        }
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return bad(format!("sh_degree must be at most {}", sh::MAX_SH_DEGREE));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad(format!("init_opacity must be in (0, 1), got {}", self.init_opacity));
        }
        if !(self.init_scale > 0.0) {
            return bad(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if self.baseline_window == Some(0) {
            return bad("baseline_window must be at least 1".into());
        }
        if self.density.interval == 0 {
            return bad("density interval must be at least 1".into());
        }
        Ok(())
    }
}

/// One sparse point used to seed the cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    /// Intensity in `[0, 1]`, when known.
    pub gray: Option<f64>,
}

/// Gray intensity assumed for points without one.
pub const DEFAULT_POINT_GRAY: f64 = 0.5;

/// One isotropic Gaussian per point. The scale is the mean distance to the three
/// nearest neighbors and the gray DC term reproduces `gray * flux_per_unit`.
pub fn init_cloud(points: &[ScenePoint], config: &TrainConfig, flux_per_unit: f64) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot initialize from an empty point list".into()));
    }
    config.validate()?;
    if !(flux_per_unit > 0.0 && flux_per_unit.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "flux_per_unit must be positive, got {flux_per_unit}"
        )));
    }
    let mut cloud = GaussianCloud::new(config.sh_degree);
    for (i, p) in points.iter().enumerate() {
        if !p.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} is not finite")));
        }
        let mut nearest = [f64::INFINITY; 3];
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = (p.position - q.position).norm();
            if d < nearest[2] {
                nearest[2] = d;
                nearest.sort_by(f64::total_cmp);
            }
        }
        let found: Vec<f64> = nearest.iter().copied().filter(|d| d.is_finite() && *d > 0.0).collect();
        let sigma = if found.is_empty() {
            config.init_scale
        } else {
            found.iter().sum::<f64>() / found.len() as f64
        };
        let mut g = Gaussian::isotropic(p.position, sigma, config.init_opacity, config.sh_degree);
        g.opacity_logit = logit(config.init_opacity);
        let gray = p.gray.unwrap_or(DEFAULT_POINT_GRAY).clamp(0.0, 1.0);
        g.set_gray_flux((gray * flux_per_unit).max(1e-6));
        cloud.push(g)?;
    }
    Ok(cloud)
}

/// Radius of the camera centers around their mean, padded by 10%.
pub fn scene_extent(views: &[CameraView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Adam moments for every trainable group plus density-control statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub position: Moments,
    pub log_scale: Moments,
    pub rotation: Moments,
    pub opacity: Moments,
    pub sh_gray_dc: Moments,
    pub sh_gray_rest: Moments,
    /// Sum of screen-space positional gradient norms since the last density event.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
}

impl OptimState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        let k = cloud.coeffs_per_channel();
        Self {
            step: 0,
            position: Moments::new(3, n),
            log_scale: Moments::new(3, n),
            rotation: Moments::new(4, n),
            opacity: Moments::new(1, n),
            sh_gray_dc: Moments::new(1, n),
            sh_gray_rest: Moments::new(k - 1, n),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
        }
    }

    fn groups_mut(&mut self) -> [&mut Moments; 6] {
        [
            &mut self.position,
            &mut self.log_scale,
            &mut self.rotation,
            &mut self.opacity,
            &mut self.sh_gray_dc,
            &mut self.sh_gray_rest,
        ]
    }

    pub fn rows(&self) -> usize {
        self.grad_accum.len()
    }

    /// Every moment buffer has one row per Gaussian.
    pub fn check(&self, cloud: &GaussianCloud) -> Result<()> {
        let n = cloud.len();
        let k = cloud.coeffs_per_channel();
        let shapes = [
            (self.position.m.len(), 3 * n),
            (self.log_scale.m.len(), 3 * n),
            (self.rotation.m.len(), 4 * n),
            (self.opacity.m.len(), n),
            (self.sh_gray_dc.m.len(), n),
            (self.sh_gray_rest.m.len(), (k - 1) * n),
            (self.grad_accum.len(), n),
            (self.grad_count.len(), n),
        ];
        for (actual, expected) in shapes {
            if actual != expected {
                return Err(mismatch(expected, actual));
            }
        }
        Ok(())
    }

    pub(crate) fn retain_rows(&mut self, keep: &[bool]) {
        for g in self.groups_mut() {
            g.retain_rows(keep);
        }
        let mut i = 0;
        self.grad_accum.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        self.grad_count.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    pub(crate) fn push_zero_rows(&mut self, n: usize) {
        for g in self.groups_mut() {
            g.push_zero_rows(n);
        }
        self.grad_accum.resize(self.grad_accum.len() + n, 0.0);
        self.grad_count.resize(self.grad_count.len() + n, 0);
    }

    pub(crate) fn reset_density_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0);
    }
}

/// Binary frames and poses for stage 1.
#[derive(Debug, Clone)]
pub struct PhotonDataset {
    pub views: Vec<CameraView>,
    pub frames: Vec<Vec<BinaryFrame>>,
}

impl PhotonDataset {
    pub fn new(views: Vec<CameraView>, frames: Vec<Vec<BinaryFrame>>) -> Result<Self> {
        if views.len() != frames.len() {
            return Err(mismatch(views.len(), frames.len()));
        }
        if views.is_empty() {
            return Err(Error::InvalidInput("dataset has no views".into()));
        }
        for (v, fs) in views.iter().zip(&frames) {
            for f in fs {
                if f.width() != v.width() || f.height() != v.height() {
                    return Err(mismatch(
                        format!("{}x{}", v.width(), v.height()),
                        format!("{}x{}", f.width(), f.height()),
                    ));
                }
            }
        }
        if frames.iter().all(|f| f.is_empty()) {
            return Err(Error::InvalidInput("dataset has no frames".into()));
        }
        Ok(Self { views, frames })
    }
}

/// What each stage-1 step is fitted against.
#[derive(Debug, Clone)]
pub enum Stage1Targets {
    /// Single binary frames with the photon loss.
    Photon,
    /// Non-overlapping `window`-frame averages per view, with L1 on detection probability.
    Averaged { window: usize, images: Vec<Vec<GrayImage>> },
}

impl Stage1Targets {
    pub fn for_config(data: &PhotonDataset, config: &TrainConfig) -> Result<Self> {
        let Some(window) = config.baseline_window else {
            return Ok(Self::Photon);
        };
        let images = data
            .frames
            .iter()
            .map(|fs| {
                fs.chunks(window)
                    .filter(|c| c.len() == window)
                    .map(|c| average_frames(c, 1))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if images.iter().all(|v| v.is_empty()) {
            return Err(Error::InvalidInput(format!(
                "no view has {window} frames to average"
            )));
        }
        Ok(Self::Averaged { window, images })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iter: u64,
    pub view: usize,
    pub photon: f64,
    pub smooth: Option<f64>,
    pub total: f64,
    pub gaussians: usize,
    pub seconds: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "iter={} view={} photon={:.6e} smooth={} total={:.6e} gaussians={} seconds={:.4}",
            self.iter,
            self.view,
            self.photon,
            self.smooth.map_or("-".to_string(), |s| format!("{s:.6e}")),
            self.total,
            self.gaussians,
            self.seconds
        )
    }
}

fn step_rng(seed: u64, iter: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, iter, stream]))
}

/// Exponential interpolation of the position learning rate.
pub fn position_lr(config: &TrainConfig, iter: u64, extent: f64) -> f64 {
    let t = (iter as f64 / config.total_iters.max(1) as f64).clamp(0.0, 1.0);
    let (a, b) = (config.lr.position_init.ln(), config.lr.position_final.ln());
    (a + t * (b - a)).exp() * extent
}

/// One stage-1 iteration: sample a view and target, render, back-propagate the
/// photon (and, late in training, smoothing) loss, and take an Adam step on
/// geometry and gray appearance. On error the cloud is left untouched.
pub fn stage1_step(
    cloud: &mut GaussianCloud,
    data: &PhotonDataset,
    targets: &Stage1Targets,
    optim: &mut OptimState,
    config: &TrainConfig,
    iter: u64,
) -> Result<StepRecord> {
    let start = Instant::now();
    if iter >= config.total_iters {
        return Err(Error::InvalidParameter(format!(
            "iteration {iter} is past total_iters {}",
            config.total_iters
        )));
    }
    optim.check(cloud)?;
    let mut rng = step_rng(config.seed, iter, 1);

    let (view_idx, target_kind) = match targets {
        Stage1Targets::Photon => {
            let candidates: Vec<usize> = (0..data.views.len()).filter(|&v| !data.frames[v].is_empty()).collect();
            let v = candidates[rng.gen_range(0..candidates.len())];
            (v, rng.gen_range(0..data.frames[v].len()))
        }
        Stage1Targets::Averaged { images, .. } => {
            let candidates: Vec<usize> = (0..images.len()).filter(|&v| !images[v].is_empty()).collect();
            let v = candidates[rng.gen_range(0..candidates.len())];
            (v, rng.gen_range(0..images[v].len()))
        }
    };
    let view = &data.views[view_idx];
    let out = render(cloud, view, RenderMode::PhotonProb)?;
    let prob = out.prob.expect("photon-probability render");
    let loss = match targets {
        Stage1Targets::Photon => photon_loss(&prob, &data.frames[view_idx][target_kind])?,
        Stage1Targets::Averaged { images, .. } => l1_loss(&prob, &images[view_idx][target_kind])?,
    };
    let upstream: Vec<f64> = loss.pixel_grad.iter().map(|g| g * config.weights.photon).collect();
    let mut grads = render_backward(cloud, view, RenderMode::PhotonProb, &upstream)?;

    let smoothing = matches!(targets, Stage1Targets::Photon)
        && iter >= config.smooth_start_iter
        && config.weights.smooth != 0.0;
    let mut smooth_value = None;
    if smoothing {
        let s = smooth_loss(
            cloud,
            view,
            config.sigma_smooth,
            config.num_perturbed,
            &mut rng,
            config.smooth_stop_grad_mean,
        )?;
        grads.add_scaled(&s.gradients, config.weights.smooth);
        smooth_value = Some(s.loss.value);
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "stage-1 iteration {iter}, view {view_idx}"
        )));
    }

    // density statistics in normalized device units
    let (hw, hh) = (0.5 * view.width() as f64, 0.5 * view.height() as f64);
    for i in 0..cloud.len() {
        if grads.visible[i] {
            let g = grads.mean2d[i];
            optim.grad_accum[i] += (g.x * hw).hypot(g.y * hh);
            optim.grad_count[i] += 1;
        }
    }

    let extent = config.scene_extent.unwrap_or(1.0);
    apply_stage1_update(cloud, optim, &grads, config, position_lr(config, iter, extent));

    let total = config.weights.photon * loss.value
        + smooth_value.map_or(0.0, |s| config.weights.smooth * s);
    Ok(StepRecord {
        iter,
        view: view_idx,
        photon: loss.value,
        smooth: smooth_value,
        total,
        gaussians: cloud.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn apply_stage1_update(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    grads: &RenderGradients,
    config: &TrainConfig,
    lr_pos: f64,
) {
    optim.step += 1;
    let t = optim.step;
    let lr = &config.lr;
    let adam = &config.adam;
    let k = cloud.coeffs_per_channel();
    let lr_rest = lr.sh_gray / lr.sh_rest_divisor;
    for (i, g) in cloud.gaussians.iter_mut().enumerate() {
        let mut p: [f64; 3] = g.position.into();
        optim.position.update(i, &mut p, grads.position[i].as_slice(), lr_pos, t, adam);
        g.position = p.into();
        let mut s: [f64; 3] = g.log_scale.into();
        optim.log_scale.update(i, &mut s, grads.log_scale[i].as_slice(), lr.log_scale, t, adam);
        g.log_scale = s.into();
        optim.rotation.update(i, &mut g.rotation, &grads.rotation[i], lr.rotation, t, adam);
        let mut o = [g.opacity_logit];
        optim.opacity.update(i, &mut o, &[grads.opacity_logit[i]], lr.opacity, t, adam);
        g.opacity_logit = o[0];
        let sg = &grads.sh_gray[i * k..(i + 1) * k];
        optim.sh_gray_dc.update(i, &mut g.sh_gray[..1], &sg[..1], lr.sh_gray, t, adam);
        optim.sh_gray_rest.update(i, &mut g.sh_gray[1..], &sg[1..], lr_rest, t, adam);
        g.normalize_rotation();
    }
}

/// Owns the evolving cloud and optimizer state for stage 1.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cloud: GaussianCloud,
    pub optim: OptimState,
    pub config: TrainConfig,
    /// Next iteration to run.
    pub iter: u64,
}

impl Trainer {
    /// `scene_extent` in the config is filled in from the dataset when absent.
    pub fn new(mut cloud: GaussianCloud, mut config: TrainConfig, data: &PhotonDataset) -> Result<Self> {
        config.validate()?;
        cloud.validate()?;
        if cloud.sh_degree != config.sh_degree {
            return Err(Error::InvalidParameter(format!(
                "cloud has SH degree {} but config asks for {}",
                cloud.sh_degree, config.sh_degree
            )));
        }
        cloud.gray = GrayRadiance::Flux;
        if config.scene_extent.is_none() {
            config.scene_extent = Some(scene_extent(&data.views));
        }
        let optim = OptimState::new(&cloud);
        Ok(Self {
            cloud,
            optim,
            config,
            iter: 0,
        })
    }

    /// Resume from saved state.
    pub fn resume(cloud: GaussianCloud, optim: OptimState, config: TrainConfig, iter: u64) -> Result<Self> {
        config.validate()?;
        optim.check(&cloud)?;
        Ok(Self {
            cloud,
            optim,
            config,
            iter,
        })
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.config.total_iters
    }

    /// Run one iteration and any density event scheduled right after it.
    pub fn step(&mut self, data: &PhotonDataset, targets: &Stage1Targets) -> Result<StepRecord> {
        let record = stage1_step(&mut self.cloud, data, targets, &mut self.optim, &self.config, self.iter)?;
        self.iter += 1;
        let d = &self.config.density;
        let done = self.iter;
        if done >= d.start_iter
            && done <= d.stop_iter
            && done < self.config.smooth_start_iter
            && done % d.interval == 0
        {
            let mut rng = step_rng(self.config.seed, done, 2);
            let report = densify_and_prune(&mut self.cloud, &mut self.optim, &self.config, &mut rng);
            log::debug!("iter {done}: {report:?}");
        }
        Ok(record)
    }

    /// Run until `until` (exclusive) or the end of the schedule.
    pub fn run(
        &mut self,
        data: &PhotonDataset,
        targets: &Stage1Targets,
        until: u64,
        mut on_record: impl FnMut(&StepRecord),
    ) -> Result<()> {
        let until = until.min(self.config.total_iters);
        while self.iter < until {
            let r = self.step(data, targets)?;
            on_record(&r);
        }
        Ok(())
    }
}

/// Convenience: build a trainer from points and run stage 1 to completion.
pub fn reconstruct(
    points: &[ScenePoint],
    data: &PhotonDataset,
    config: TrainConfig,
    flux_per_unit: f64,
    on_record: impl FnMut(&StepRecord),
) -> Result<Trainer> {
    let cloud = init_cloud(points, &config, flux_per_unit)?;
    let targets = Stage1Targets::for_config(data, &config)?;
    let mut trainer = Trainer::new(cloud, config, data)?;
    let total = trainer.config.total_iters;
    trainer.run(data, &targets, total, on_record)?;
    Ok(trainer)
}
