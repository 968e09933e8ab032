//! Dataset manifests in TOML.
//!
//! ```toml
//! version = 1
//! points = "sparse/points3D.txt"      # optional, COLMAP points3D.txt layout
//!
//! [sensor]                            # simulator settings used for the frames
//! flux_gain = 0.13
//!
//! [[views]]
//! id = 0
//! frames = "frames/view_000.pbf"      # omitted for held-out views
//! frame_count = 200
//! ground_truth = "truth/view_000.png" # optional normalized intensity
//! ground_truth_color = "truth/view_000_color.png" # optional
//! held_out = false                   # held-out views are skipped by simulation
//! camera = { fx = 80.0, fy = 80.0, cx = 32.0, cy = 32.0, width = 64, height = 64 }
//! pose = { qvec = [1.0, 0.0, 0.0, 0.0], tvec = [0.0, 0.0, 4.0] }  # world to camera, (w, x, y, z)
//!
//! [reference]                         # optional color reference for colorization
//! image = "reference.png"
//! camera = { fx = 80.0, fy = 80.0, cx = 32.0, cy = 32.0, width = 64, height = 64 }
//! pose = { qvec = [1.0, 0.0, 0.0, 0.0], tvec = [0.0, 0.0, 4.0] }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::colmap::parse_points;
use super::images::{load_color, load_gray};
use super::pbf::{read_frames, read_header};
use crate::camera::{CameraIntrinsics, CameraPose, CameraView};
use crate::error::{Error, Result};
use crate::image::{ColorImage, GrayImage};
use crate::sim::SensorConfig;
use crate::trainer::{PhotonDataset, ScenePoint};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
}

impl PoseEntry {
    pub fn from_pose(pose: &CameraPose) -> Self {
        let t = pose.translation;
        Self { qvec: pose.wxyz(), tvec: [t.x, t.y, t.z] }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        CameraPose::from_wxyz(self.qvec, Vector3::from(self.tvec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    #[serde(default)]
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_color: Option<PathBuf>,
    /// Held-out views are not simulated and are used for evaluation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub held_out: bool,
    pub camera: CameraIntrinsics,
    pub pose: PoseEntry,
}

impl ViewEntry {
    pub fn view(&self) -> Result<CameraView> {
        self.camera.validate()?;
        Ok(CameraView::new(self.camera, self.pose.to_pose()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub image: PathBuf,
    pub camera: CameraIntrinsics,
    pub pose: PoseEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl DatasetManifest {
    pub fn new(sensor: SensorConfig, root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            points: None,
            sensor,
            views: Vec::new(),
            reference: None,
            root: root.into(),
        }
    }

    pub fn from_toml(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Self = toml::from_str(text).map_err(|e| manifest_err(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(manifest_err(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        m.root = root.into();
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| manifest_err(e.to_string()))
    }

    /// Parse and validate, including every referenced file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_toml(&text, root)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    fn require_file(&self, rel: &Path, what: &str) -> Result<PathBuf> {
        let p = self.resolve(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(manifest_err(format!("{what} {} does not exist", p.display())))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let mut ids = HashSet::new();
        for v in &self.views {
            if !ids.insert(v.id) {
                return Err(manifest_err(format!("duplicate view id {}", v.id)));
            }
            v.view().map_err(|e| manifest_err(format!("view {}: {e}", v.id)))?;
            if let Some(f) = &v.frames {
                let p = self.require_file(f, &format!("view {} frames", v.id))?;
                let (w, h, n) = read_header(&p)?;
                if (w, h) != (v.camera.width as usize, v.camera.height as usize) {
                    return Err(manifest_err(format!(
                        "view {}: frames are {w}x{h} but intrinsics say {}x{}",
                        v.id, v.camera.width, v.camera.height
                    )));
                }
                if n != v.frame_count {
                    return Err(manifest_err(format!(
                        "view {}: file holds {n} frames, manifest says {}",
                        v.id, v.frame_count
                    )));
                }
            } else if v.frame_count != 0 {
                return Err(manifest_err(format!("view {} lists frames without a file", v.id)));
            }
            for gt in [&v.ground_truth, &v.ground_truth_color].into_iter().flatten() {
                self.require_file(gt, &format!("view {} ground truth", v.id))?;
            }
        }
        if let Some(r) = &self.reference {
            self.require_file(&r.image, "reference image")?;
            r.camera.validate()?;
            r.pose.to_pose()?;
        }
        if let Some(p) = &self.points {
            self.require_file(p, "point file")?;
        }
        Ok(())
    }

    /// Views that carry frames, with their frames.
    pub fn photon_dataset(&self) -> Result<PhotonDataset> {
        let mut views = Vec::new();
        let mut frames = Vec::new();
        for v in self.views.iter().filter(|v| v.frames.is_some()) {
            let file = read_frames(&self.resolve(v.frames.as_ref().expect("filtered")))?;
            views.push(v.view()?);
            frames.push(file.frames);
        }
        PhotonDataset::new(views, frames)
    }

    /// Views with a gray ground-truth image.
    pub fn gray_truth(&self) -> Result<Vec<(u64, CameraView, GrayImage)>> {
        self.views
            .iter()
            .filter_map(|v| v.ground_truth.as_ref().map(|p| (v, p)))
            .map(|(v, p)| Ok((v.id, v.view()?, load_gray(&self.resolve(p))?)))
            .collect()
    }

    /// Views with a color ground-truth image.
    pub fn color_truth(&self) -> Result<Vec<(u64, CameraView, ColorImage)>> {
        self.views
            .iter()
            .filter_map(|v| v.ground_truth_color.as_ref().map(|p| (v, p)))
            .map(|(v, p)| Ok((v.id, v.view()?, load_color(&self.resolve(p))?)))
            .collect()
    }

    pub fn reference(&self) -> Result<(ColorImage, CameraView)> {
        let r = self
            .reference
            .as_ref()
            .ok_or_else(|| manifest_err("no reference color image in manifest"))?;
        let view = CameraView::new(r.camera, r.pose.to_pose()?);
        let image = load_color(&self.resolve(&r.image))?;
        if image.width != view.width() || image.height != view.height() {
            return Err(crate::error::mismatch(
                format!("{}x{}", view.width(), view.height()),
                format!("{}x{}", image.width, image.height),
            ));
        }
        Ok((image, view))
    }

    pub fn scene_points(&self) -> Result<Vec<ScenePoint>> {
        let rel = self
            .points
            .as_ref()
            .ok_or_else(|| manifest_err("no sparse points in manifest"))?;
        let text = fs::read_to_string(self.resolve(rel))?;
        Ok(parse_points(&text)?
            .iter()
            .map(|p| ScenePoint { position: p.position, gray: Some(p.gray()) })
            .collect())
    }
}
