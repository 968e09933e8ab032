//! Slow per-pixel renderer: every Gaussian is tested against every pixel in one
//! global depth order. Used to check the tiled rasterizer.

use super::project::{project, splat_alpha, Appearance, Culled};
use super::raster::assemble_output;
use super::{RenderDiagnostics, RenderMode, RenderOutput, RenderSettings};
use crate::camera::CameraView;
use crate::error::Result;
use crate::gaussian::GaussianCloud;
use crate::image::GrayImage;

pub fn render_reference(
    cloud: &GaussianCloud,
    view: &CameraView,
    mode: RenderMode,
    settings: RenderSettings,
) -> Result<RenderOutput> {
    view.intrinsics.validate()?;
    cloud.validate()?;
    let appearance = Appearance {
        mode,
        gray: cloud.gray,
    };
    let mut diagnostics = RenderDiagnostics::default();
    let mut splats = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        match project(g, i, view, appearance, settings.near, false) {
            Ok(p) => splats.push(p),
            Err(reason) => {
                diagnostics.culled += 1;
                if reason == Culled::Degenerate {
                    diagnostics.degenerate += 1;
                }
            }
        }
    }
    diagnostics.visible = splats.len();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.parent_index.cmp(&b.parent_index))
    });

    let (w, h) = (view.width(), view.height());
    let nc = mode.channels();
    let mut radiance = vec![[0.0; 3]; w * h];
    let mut depth = GrayImage::new(w, h);
    let mut trans = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let (mut num, mut wsum) = (0.0, 0.0);
            let c = &mut radiance[y * w + x];
            for p in &splats {
                let Some((alpha, _, _)) = splat_alpha(p, x as f64, y as f64) else {
                    continue;
                };
                let next = t * (1.0 - alpha);
                if next < settings.termination {
                    break;
                }
                let wk = alpha * t;
                for ch in 0..nc {
                    c[ch] += p.radiance[ch] * wk;
                }
                num += p.depth * wk;
                wsum += wk;
                t = next;
            }
            depth.set(x, y, if wsum > 0.0 { num / wsum } else { 0.0 });
            trans.set(x, y, t);
        }
    }
    Ok(assemble_output(mode, radiance, depth, trans, diagnostics))
}
