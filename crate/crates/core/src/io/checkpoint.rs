//! Versioned binary checkpoints.
//!
//! Layout, little-endian throughout: `"SPCK"`, `u32` version, `u32` length and
//! UTF-8 TOML of the training config, `u64` iteration, `f64` flux per unit
//! intensity, the cloud, then optional optimizer state and blur trajectory,
//! each behind a `u8` presence flag.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud, GrayRadiance};
use crate::sh::{num_coeffs, MAX_SH_DEGREE};
use crate::trainer::{BlurTrajectory, Knot, Moments, OptimState, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub optim: Option<OptimState>,
    pub config: TrainConfig,
    /// Next stage-1 iteration.
    pub iter: u64,
    /// Photon rate of unit intensity, used to normalize gray renders.
    pub flux_per_unit: f64,
    pub trajectory: Option<BlurTrajectory>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn moments(&mut self, m: &Moments) {
        self.u32(m.stride as u32);
        self.f64s(&m.m);
        self.f64s(&m.v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::DimensionOverflow(format!("length {n}")))?;
        // reject lengths the remaining bytes cannot hold before allocating
        let need = n.checked_mul(elem).ok_or_else(|| Error::DimensionOverflow(format!("length {n}")))?;
        if need > self.bytes.len() - self.pos {
            return Err(Error::Truncated { needed: self.pos + need, available: self.bytes.len() });
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::InvalidInput(format!("bad presence flag {v}"))),
        }
    }
    fn moments(&mut self) -> Result<Moments> {
        let stride = self.u32()? as usize;
        let m = self.f64s()?;
        let v = self.f64s()?;
        if m.len() != v.len() || (stride == 0 && !m.is_empty()) || (stride > 0 && m.len() % stride != 0) {
            return Err(Error::InvalidInput("inconsistent optimizer moments".into()));
        }
        Ok(Moments { stride, m, v })
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.cloud.validate()?;
    if let Some(o) = &ck.optim {
        o.check(&ck.cloud)?;
    }
    let config = toml::to_string(&ck.config).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(config.len() as u32);
    w.0.extend_from_slice(config.as_bytes());
    w.u64(ck.iter);
    w.f64(ck.flux_per_unit);

    let c = &ck.cloud;
    w.u32(c.sh_degree as u32);
    match c.gray {
        GrayRadiance::Flux => {
            w.u8(0);
            w.f64(0.0);
        }
        GrayRadiance::Coupled { flux_scale } => {
            w.u8(1);
            w.f64(flux_scale);
        }
    }
    w.u64(c.len() as u64);
    for g in &c.gaussians {
        g.position.iter().chain(g.log_scale.iter()).for_each(|&v| w.f64(v));
        g.rotation.iter().for_each(|&v| w.f64(v));
        w.f64(g.opacity_logit);
        g.sh_gray.iter().for_each(|&v| w.f64(v));
        g.sh_color.iter().flatten().for_each(|&v| w.f64(v));
    }

    match &ck.optim {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.u64(o.step);
            for m in [&o.position, &o.log_scale, &o.rotation, &o.opacity, &o.sh_gray_dc, &o.sh_gray_rest] {
                w.moments(m);
            }
            w.f64s(&o.grad_accum);
            w.u64(o.grad_count.len() as u64);
            o.grad_count.iter().for_each(|&v| w.u32(v));
        }
    }
    match &ck.trajectory {
        None => w.u8(0),
        Some(t) => {
            w.u8(1);
            w.u64(t.len() as u64);
            t.knots.iter().flat_map(|k| k.as_array()).for_each(|v| w.f64(v));
        }
    }
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
    }
    let clen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(clen)?).map_err(|_| Error::InvalidInput("config is not UTF-8".into()))?;
    let config: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
    let iter = r.u64()?;
    let flux_per_unit = r.f64()?;

    let degree = r.u32()? as usize;
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidInput(format!("SH degree {degree} out of range")));
    }
    let kind = r.u8()?;
    let scale = r.f64()?;
    let gray = match kind {
        0 => GrayRadiance::Flux,
        1 => GrayRadiance::Coupled { flux_scale: scale },
        v => return Err(Error::InvalidInput(format!("unknown gray radiance kind {v}"))),
    };
    let k = num_coeffs(degree);
    let n = r.len(8 * (11 + 4 * k))?;
    let mut cloud = GaussianCloud::new(degree);
    cloud.gray = gray;
    for _ in 0..n {
        let mut f = || r.f64();
        let position = Vector3::new(f()?, f()?, f()?);
        let log_scale = Vector3::new(f()?, f()?, f()?);
        let rotation = [f()?, f()?, f()?, f()?];
        let opacity_logit = f()?;
        let sh_gray = (0..k).map(|_| f()).collect::<Result<Vec<_>>>()?;
        let sh_color = (0..k).map(|_| Ok([f()?, f()?, f()?])).collect::<Result<Vec<_>>>()?;
        cloud.push(Gaussian { position, log_scale, rotation, opacity_logit, sh_gray, sh_color })?;
    }
    cloud.validate()?;

    let optim = if r.flag()? {
        let step = r.u64()?;
        let mut groups = Vec::with_capacity(6);
        for _ in 0..6 {
            groups.push(r.moments()?);
        }
        let grad_accum = r.f64s()?;
        let cn = r.len(4)?;
        let grad_count = (0..cn).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mut it = groups.into_iter();
        let mut next = || it.next().expect("six groups");
        let o = OptimState {
            step,
            position: next(),
            log_scale: next(),
            rotation: next(),
            opacity: next(),
            sh_gray_dc: next(),
            sh_gray_rest: next(),
            grad_accum,
            grad_count,
        };
        o.check(&cloud)?;
        Some(o)
    } else {
        None
    };
    let trajectory = if r.flag()? {
        let m = r.len(48)?;
        let knots = (0..m)
            .map(|_| {
                let mut a = [0.0; 6];
                for v in &mut a {
                    *v = r.f64()?;
                }
                Ok(Knot::from_array(a))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(BlurTrajectory { knots })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::InvalidInput(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { cloud, optim, config, iter, flux_per_unit, trajectory })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
