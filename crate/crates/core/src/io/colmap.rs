//! COLMAP text models (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::{CameraIntrinsics, CameraPose, CameraView};
use crate::error::{Error, Result};
use crate::gaussian::luminance;
use crate::trainer::ScenePoint;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub image_id: u64,
    pub camera_id: u64,
    pub name: String,
    pub view: CameraView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub point_id: u64,
    pub position: Vector3<f64>,
    pub rgb: [u8; 3],
}

impl ColmapPoint {
    /// BT.601 luma of the point color in `[0, 1]`.
    pub fn gray(&self) -> f64 {
        luminance(self.rgb.map(|c| c as f64 / 255.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColmapModel {
    /// Sorted by image id.
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl ColmapModel {
    pub fn views(&self) -> Vec<CameraView> {
        self.images.iter().map(|i| i.view).collect()
    }

    pub fn scene_points(&self) -> Vec<ScenePoint> {
        self.points
            .iter()
            .map(|p| ScenePoint { position: p.position, gray: Some(p.gray()) })
            .collect()
    }
}

struct Lines<'a> {
    file: &'a str,
}

impl Lines<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { file: self.file.to_string(), line, message: message.into() }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        let tok = tok.ok_or_else(|| self.err(line, format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(line, format!("invalid {what} `{tok}`")))
    }

    fn finite(&self, line: usize, tok: Option<&str>, what: &str) -> Result<f64> {
        let v: f64 = self.num(line, tok, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(line, format!("{what} is not finite")))
        }
    }
}

fn is_comment(line: &str) -> bool {
    line.trim_start().starts_with('#')
}

pub fn parse_cameras(text: &str) -> Result<HashMap<u64, CameraIntrinsics>> {
    let p = Lines { file: "cameras.txt" };
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if is_comment(line) || line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let id: u64 = p.num(n, t.next(), "camera id")?;
        let model = t.next().ok_or_else(|| p.err(n, "missing camera model"))?;
        let width: u32 = p.num(n, t.next(), "width")?;
        let height: u32 = p.num(n, t.next(), "height")?;
        let params = match model {
            "SIMPLE_PINHOLE" => 3,
            "PINHOLE" => 4,
            other => return Err(Error::UnsupportedCameraModel(other.to_string())),
        };
        let v: Vec<f64> = (0..params)
            .map(|k| p.finite(n, t.next(), &format!("parameter {k}")))
            .collect::<Result<_>>()?;
        if t.next().is_some() {
            return Err(p.err(n, format!("{model} takes {params} parameters")));
        }
        let (fx, fy, cx, cy) = if params == 3 { (v[0], v[0], v[1], v[2]) } else { (v[0], v[1], v[2], v[3]) };
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| p.err(n, e.to_string()))?;
        if out.insert(id, k).is_some() {
            return Err(p.err(n, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

pub fn parse_images(text: &str, cameras: &HashMap<u64, CameraIntrinsics>) -> Result<Vec<ColmapImage>> {
    let p = Lines { file: "images.txt" };
    let mut out: Vec<ColmapImage> = Vec::new();
    let mut expect_points = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if is_comment(line) {
            continue;
        }
        if expect_points {
            // 2D observations are not needed
            expect_points = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let image_id: u64 = p.num(n, t.next(), "image id")?;
        let q: Vec<f64> = ["qw", "qx", "qy", "qz"]
            .iter()
            .map(|w| p.finite(n, t.next(), w))
            .collect::<Result<_>>()?;
        let tv: Vec<f64> = ["tx", "ty", "tz"]
            .iter()
            .map(|w| p.finite(n, t.next(), w))
            .collect::<Result<_>>()?;
        let camera_id: u64 = p.num(n, t.next(), "camera id")?;
        let name = t.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(p.err(n, "missing image name"));
        }
        let k = cameras
            .get(&camera_id)
            .ok_or_else(|| p.err(n, format!("unknown camera id {camera_id}")))?;
        let pose = CameraPose::from_wxyz([q[0], q[1], q[2], q[3]], Vector3::new(tv[0], tv[1], tv[2]))
            .map_err(|e| p.err(n, e.to_string()))?;
        if out.iter().any(|im| im.image_id == image_id) {
            return Err(p.err(n, format!("duplicate image id {image_id}")));
        }
        out.push(ColmapImage { image_id, camera_id, name, view: CameraView::new(*k, pose) });
        expect_points = true;
    }
    out.sort_by_key(|im| im.image_id);
    Ok(out)
}

pub fn parse_points(text: &str) -> Result<Vec<ColmapPoint>> {
    let p = Lines { file: "points3D.txt" };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if is_comment(line) || line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let point_id: u64 = p.num(n, t.next(), "point id")?;
        let xyz: Vec<f64> = ["x", "y", "z"]
            .iter()
            .map(|w| p.finite(n, t.next(), w))
            .collect::<Result<_>>()?;
        let rgb: Vec<u8> = ["r", "g", "b"]
            .iter()
            .map(|w| p.num(n, t.next(), w))
            .collect::<Result<_>>()?;
        // reprojection error and track are ignored
        out.push(ColmapPoint {
            point_id,
            position: Vector3::new(xyz[0], xyz[1], xyz[2]),
            rgb: [rgb[0], rgb[1], rgb[2]],
        });
    }
    Ok(out)
}

/// Read `cameras.txt`, `images.txt` and `points3D.txt` from `dir`.
pub fn parse_colmap_text(dir: &Path) -> Result<ColmapModel> {
    let read = |name: &str| -> Result<String> {
        let bytes = fs::read(dir.join(name))?;
        String::from_utf8(bytes).map_err(|_| Error::Parse {
            file: name.to_string(),
            line: 0,
            message: "not valid UTF-8".into(),
        })
    };
    let cameras = parse_cameras(&read("cameras.txt")?)?;
    let images = parse_images(&read("images.txt")?, &cameras)?;
    let points = parse_points(&read("points3D.txt")?)?;
    Ok(ColmapModel { images, points })
}

/// Write `model` as a text model with one PINHOLE camera per image.
pub fn write_colmap_text(dir: &Path, model: &ColmapModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut cams = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut imgs = String::from("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (i, im) in model.images.iter().enumerate() {
        let k = &im.view.intrinsics;
        let cam = i + 1;
        writeln!(cams, "{cam} PINHOLE {} {} {:?} {:?} {:?} {:?}", k.width, k.height, k.fx, k.fy, k.cx, k.cy)
            .expect("write to string");
        let q = im.view.pose.wxyz();
        let t = im.view.pose.translation;
        writeln!(
            imgs,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {cam} {}\n",
            im.image_id, q[0], q[1], q[2], q[3], t.x, t.y, t.z, im.name
        )
        .expect("write to string");
    }
    let mut pts = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n");
    for p in &model.points {
        writeln!(
            pts,
            "{} {:?} {:?} {:?} {} {} {} 0",
            p.point_id, p.position.x, p.position.y, p.position.z, p.rgb[0], p.rgb[1], p.rgb[2]
        )
        .expect("write to string");
    }
    fs::write(dir.join("cameras.txt"), cams)?;
    fs::write(dir.join("images.txt"), imgs)?;
    fs::write(dir.join("points3D.txt"), pts)?;
    Ok(())
}
