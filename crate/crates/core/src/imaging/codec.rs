//! PNG/JPEG decoding and PNG encoding for the CLI and service boundary.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::{ImageRgb8, ImagingError, PlaneF32};
use crate::preprocess::RegionMask;

pub fn decode_image(bytes: &[u8]) -> Result<ImageRgb8, ImagingError> {
    let img = image::load_from_memory(bytes).map_err(|e| ImagingError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageRgb8::new(w as usize, h as usize, rgb.into_raw())
}

pub fn read_image(path: &Path) -> Result<ImageRgb8, ImagingError> {
    let bytes = std::fs::read(path).map_err(|e| ImagingError::Decode(format!("{}: {e}", path.display())))?;
    decode_image(&bytes)
}

fn encode(img: DynamicImage) -> Result<Vec<u8>, ImagingError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn encode_png(img: &ImageRgb8) -> Result<Vec<u8>, ImagingError> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| ImagingError::Encode("raster size mismatch".into()))?;
    encode(DynamicImage::ImageRgb8(buf))
}

/// Grayscale PNG with values clamped to `0..=255`.
pub fn encode_plane_png(plane: &PlaneF32) -> Result<Vec<u8>, ImagingError> {
    let raw = plane.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(plane.width() as u32, plane.height() as u32, raw)
        .ok_or_else(|| ImagingError::Encode("raster size mismatch".into()))?;
    encode(DynamicImage::ImageLuma8(buf))
}

/// Foreground 255, background 0.
pub fn encode_mask_png(mask: &RegionMask) -> Result<Vec<u8>, ImagingError> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| ImagingError::Encode("raster size mismatch".into()))?;
    encode(DynamicImage::ImageLuma8(buf))
}

pub fn write_png(img: &ImageRgb8, path: &Path) -> Result<(), ImagingError> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| ImagingError::Encode(format!("{}: {e}", path.display())))
}
