//! Raster types, colour-space conversions and geometric transforms.

mod codec;
mod color;
mod geometry;

pub use codec::{decode_image, encode_mask_png, encode_plane_png, encode_png, read_image, write_png};
pub use color::{convert_back, convert_color, lab_to_rgb, rgb_to_hsv, rgb_to_lab, rgb_to_ycbcr, ColorSpaceId};
pub use geometry::{transform_geometric, Affine2x3, GeometricOp};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("plane dimensions disagree: {0}")]
    DimensionMismatch(String),
    #[error("affine matrix is singular (det = {0})")]
    SingularAffine(f64),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
}

/// 8-bit sRGB raster, row-major `R,G,B` triples.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageRgb8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageRgb8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!("{width}x{height} has no pixels")));
        }
        if data.len() != width * height * 3 {
            return Err(ImagingError::InvalidRaster(format!(
                "{width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Single-channel float raster.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneF32 {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl PlaneF32 {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!("{width}x{height} has no pixels")));
        }
        if data.len() != width * height {
            return Err(ImagingError::InvalidRaster(format!(
                "{width}x{height} plane needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImagingError::InvalidRaster("plane contains non-finite values".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self::from_fn(width, height, |_, _| v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &PlaneF32) -> bool {
        self.width == other.width && self.height == other.height
    }
}
