//! Row-major image containers.

use crate::error::{mismatch, Error, Result};

/// Single-channel `f64` grid (intensities, probabilities, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(mismatch(width * height, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &GrayImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel photon rate `λ = φτ`; every entry finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxImage(GrayImage);

impl FluxImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self(GrayImage::new(width, height))
    }

    pub fn new(image: GrayImage) -> Result<Self> {
        if let Some((i, v)) = image
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "flux must be finite and nonnegative, pixel {i} is {v}"
            )));
        }
        Ok(Self(image))
    }

    /// Clamp negative values to zero; non-finite values are still rejected.
    pub fn clamped(mut image: GrayImage) -> Result<Self> {
        image.data.iter_mut().for_each(|v| *v = v.max(0.0));
        Self::new(image)
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn lambda(&self) -> &[f64] {
        &self.0.data
    }

    pub fn as_image(&self) -> &GrayImage {
        &self.0
    }

    pub fn into_image(self) -> GrayImage {
        self.0
    }
}

/// Interleaved RGB grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, rgb: Vec<[f64; 3]>) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(mismatch(width * height, rgb.len()));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn same_shape(&self, other: &ColorImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Channel values clamped into `[0, 1]`.
    pub fn clamped(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }

    pub fn luminance(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.rgb.iter().map(|p| crate::gaussian::luminance(*p)).collect(),
        }
    }

    pub fn flat(&self) -> &[f64] {
        self.rgb.as_flattened()
    }
}

/// One single-photon exposure, bit-packed row-major.
///
/// Each row is padded to a whole number of bytes; bit 7 of the first byte is
/// the leftmost pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryFrame {
    width: usize,
    height: usize,
    bytes: Vec<u8>,
}

impl BinaryFrame {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bytes: vec![0; Self::row_bytes_for(width) * height],
        }
    }

    pub fn row_bytes_for(width: usize) -> usize {
        width.div_ceil(8)
    }

    pub fn from_packed(width: usize, height: usize, bytes: Vec<u8>) -> Result<Self> {
        let expected = Self::row_bytes_for(width) * height;
        if bytes.len() != expected {
            return Err(mismatch(expected, bytes.len()));
        }
        let mut frame = Self {
            width,
            height,
            bytes,
        };
        // padding bits are not part of the frame
        let tail = width % 8;
        if tail != 0 {
            let mask = 0xFFu8 << (8 - tail);
            let rb = Self::row_bytes_for(width);
            for y in 0..height {
                frame.bytes[y * rb + rb - 1] &= mask;
            }
        }
        Ok(frame)
    }

    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(mismatch(width * height, bits.len()));
        }
        let mut f = Self::new(width, height);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                f.set(i % width, i / width, true);
            }
        }
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn packed(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        let idx = y * Self::row_bytes_for(self.width) + x / 8;
        (self.bytes[idx] >> (7 - (x % 8))) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let idx = y * Self::row_bytes_for(self.width) + x / 8;
        let mask = 1u8 << (7 - (x % 8));
        if value {
            self.bytes[idx] |= mask;
        } else {
            self.bytes[idx] &= !mask;
        }
    }

    /// Unpacked bits as `0.0` / `1.0`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.get(x, y) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn detection_rate(&self) -> f64 {
        self.count_ones() as f64 / (self.width * self.height).max(1) as f64
    }
}
