//! Contrast normalisation, thresholding, morphology, sclera-referenced
//! illumination correction and CRF mask refinement.

mod clahe;
mod crf;
mod illumination;
mod morph;
mod threshold;

pub use clahe::{clahe, clip_histogram, redistribute_excess, ClaheConfig, CLAHE_BINS};
pub use crf::{crf_refine, crf_refine_traced, potts_energy, PROB_FLOOR};
pub use illumination::{correct_illumination, illumination_gains, DEFAULT_TARGET_WHITE, GAIN_RANGE};
pub use morph::{morph, MorphOp, StructuringElement};
pub use threshold::{adaptive_threshold, box_mean};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid CLAHE configuration: {0}")]
    InvalidClaheConfig(String),
    #[error("tile grid {tiles_x}x{tiles_y} is too large for a {width}x{height} plane (tiles must be at least 2x2)")]
    TileGridTooLarge {
        tiles_x: usize,
        tiles_y: usize,
        width: usize,
        height: usize,
    },
    #[error("threshold window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("sclera mask is empty; no illumination reference")]
    NoReference,
    #[error("mask is {mask_w}x{mask_h} but raster is {width}x{height}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        width: usize,
        height: usize,
    },
    #[error("unary probabilities must be finite and within [0, 1]")]
    InvalidUnary,
}

/// Binary per-pixel mask over a raster.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len().max(1) as f64
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    /// Pixels set in `self` but not in `other`.
    pub fn minus(&self, other: &RegionMask) -> Self {
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Self { width: self.width, height: self.height, bits }
    }

    pub fn check_shape(&self, width: usize, height: usize) -> Result<(), PreprocessError> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(PreprocessError::DimensionMismatch {
                mask_w: self.width,
                mask_h: self.height,
                width,
                height,
            })
        }
    }
}
