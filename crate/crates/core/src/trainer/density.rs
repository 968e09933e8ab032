//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;
use rand::Rng;

use super::{OptimState, TrainConfig};
use crate::gaussian::{quat_to_matrix, Gaussian, GaussianCloud};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Uniform sample from the unit ball.
fn unit_ball<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

/// Two children of `parent`, centered at points drawn uniformly inside its 1σ
/// ellipsoid, with scales divided by `factor`.
pub(crate) fn split_gaussian<R: Rng>(parent: &Gaussian, factor: f64, rng: &mut R) -> [Gaussian; 2] {
    let r = quat_to_matrix(parent.rotation);
    let s = parent.scale();
    [0, 1].map(|_| {
        let mut child = parent.clone();
        child.position = parent.position + r * unit_ball(rng).component_mul(&s);
        child.log_scale = parent.log_scale.map(|l| l - factor.ln());
        child
    })
}

/// Grow the cloud where the mean screen-space gradient is large and drop nearly
/// transparent Gaussians. Survivors keep their optimizer rows; new Gaussians
/// start with zeroed moments. Density statistics are reset.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    config: &TrainConfig,
    rng: &mut R,
) -> DensifyReport {
    let d = &config.density;
    let extent = config.scene_extent.unwrap_or(1.0);
    let n = cloud.len();
    let mut report = DensifyReport::default();

    let mut candidates: Vec<(usize, f64)> = (0..n)
        .filter_map(|i| {
            let c = optim.grad_count[i];
            let avg = if c > 0 { optim.grad_accum[i] / c as f64 } else { 0.0 };
            (avg >= d.grad_threshold).then_some((i, avg))
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let budget = d.max_gaussians.saturating_sub(n);
    candidates.truncate(budget);
    candidates.sort_by_key(|c| c.0);

    let mut keep = vec![true; n];
    let mut added: Vec<Gaussian> = Vec::new();
    for &(i, _) in &candidates {
        let g = &cloud.gaussians[i];
        if g.scale().max() <= d.percent_dense * extent {
            added.push(g.clone());
            report.cloned += 1;
        } else {
            added.extend(split_gaussian(g, d.split_factor, rng));
            keep[i] = false;
            report.split += 1;
        }
    }

    for (i, g) in cloud.gaussians.iter().enumerate() {
        if keep[i] && g.opacity() < d.prune_opacity {
            keep[i] = false;
            report.pruned += 1;
        }
    }
    let before_prune = added.len();
    added.retain(|g| g.opacity() >= d.prune_opacity);
    report.pruned += before_prune - added.len();

    if report == DensifyReport::default() {
        optim.reset_density_stats();
        return report;
    }
    let mut i = 0;
    cloud.gaussians.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    optim.retain_rows(&keep);
    optim.push_zero_rows(added.len());
    cloud.gaussians.extend(added);
    optim.reset_density_stats();
    report
}
