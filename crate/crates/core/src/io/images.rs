//! PNG and PNM images. Gray images are stored as 16-bit PNG or 8-bit PGM,
//! color images as 16-bit PNG or 8-bit PPM; values are clamped to `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::gaussian::luminance;
use crate::image::{ColorImage, GrayImage};

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidParameter(format!(
            "unsupported image extension for {} (use .png, .pgm or .ppm)",
            path.display()
        ))),
    }
}

fn dims(width: usize, height: usize) -> Result<(u32, u32)> {
    match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::InvalidInput(format!("cannot store a {width}x{height} image"))),
    }
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_gray(path: &Path, image: &GrayImage) -> Result<()> {
    let (w, h) = dims(image.width, image.height)?;
    let format = format_for(path)?;
    let dynamic = if format == ImageFormat::Png {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_vec(w, h, image.data.iter().map(|&v| quantize16(v)).collect()).expect("buffer size");
        DynamicImage::ImageLuma16(buf)
    } else {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_vec(w, h, image.data.iter().map(|&v| quantize8(v)).collect()).expect("buffer size");
        DynamicImage::ImageLuma8(buf)
    };
    dynamic.save_with_format(path, format)?;
    Ok(())
}

pub fn save_color(path: &Path, image: &ColorImage) -> Result<()> {
    let (w, h) = dims(image.width, image.height)?;
    let format = format_for(path)?;
    let dynamic = if format == ImageFormat::Png {
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_vec(w, h, image.flat().iter().map(|&v| quantize16(v)).collect()).expect("buffer size");
        DynamicImage::ImageRgb16(buf)
    } else {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_vec(w, h, image.flat().iter().map(|&v| quantize8(v)).collect()).expect("buffer size");
        DynamicImage::ImageRgb8(buf)
    };
    dynamic.save_with_format(path, format)?;
    Ok(())
}

pub fn load_color(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)?.to_rgb32f();
    let (w, h) = img.dimensions();
    let rgb = img.pixels().map(|p| p.0.map(f64::from)).collect();
    ColorImage::from_vec(w as usize, h as usize, rgb)
}

/// Gray images load as-is; color images are reduced with BT.601 luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if img.color().has_color() {
        img.to_rgb32f().pixels().map(|p| luminance(p.0.map(f64::from))).collect()
    } else {
        img.to_luma32f().pixels().map(|p| f64::from(p.0[0])).collect()
    };
    GrayImage::from_vec(w, h, data)
}
