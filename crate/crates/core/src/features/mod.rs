//! Per-region colour feature vectors and the bottleneck regression head.
//!
//! Slot layout (version 1, 28 values):
//!
//! | slots  | content                                                      |
//! |--------|--------------------------------------------------------------|
//! | 0..24  | mean, std for R G B, L a b, Y Cb Cr, H S V (in that order)   |
//! | 24     | mean(R) − mean(G)                                            |
//! | 25     | mean erythema index `log10((R+1)/(G+1))`                     |
//! | 26     | altitude in km                                               |
//! | 27     | age in years / 100                                           |
//!
//! RGB and YCbCr are on the 0–255 scale, H in degrees (circular statistics),
//! S and V in `[0, 1]`. Standard deviations are population deviations.

mod head;

pub use head::{regress_bottleneck, DenseLayer, MlpHead};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{rgb_to_hsv, rgb_to_lab, rgb_to_ycbcr, ImageRgb8};
use crate::preprocess::RegionMask;

pub const FEATURE_LEN: usize = 28;
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("mask is {mask_w}x{mask_h} but image is {width}x{height}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        width: usize,
        height: usize,
    },
    #[error("vector has {got} values, head expects {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("invalid regression head: {0}")]
    InvalidHead(String),
    #[error("unknown region '{0}'")]
    UnknownRegion(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Nailbed,
    Conjunctiva,
    Tongue,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Nailbed, Region::Conjunctiva, Region::Tongue];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Nailbed => "nailbed",
            Region::Conjunctiva => "conjunctiva",
            Region::Tongue => "tongue",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownRegion(s.to_string()))
    }
}

/// Optional patient metadata folded into the vector; unknown values are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub altitude_m: f64,
    pub age_years: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub region: Region,
    pub valid: bool,
}

impl FeatureVector {
    pub fn invalid(region: Region) -> Self {
        Self { values: vec![0.0; FEATURE_LEN], region, valid: false }
    }

    pub fn mean_red_minus_green(&self) -> f64 {
        self.values[24]
    }

    pub fn erythema(&self) -> f64 {
        self.values[25]
    }

    /// Mean of a named slot, e.g. `feature("lab_a_mean")`.
    pub fn feature(&self, name: &str) -> Option<f64> {
        feature_names().iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

const CHANNELS: [&str; 12] = ["r", "g", "b", "lab_l", "lab_a", "lab_b", "y", "cb", "cr", "h", "s", "v"];
const HUE: usize = 9;

pub fn feature_names() -> Vec<&'static str> {
    static NAMES: std::sync::OnceLock<Vec<&'static str>> = std::sync::OnceLock::new();
    NAMES
        .get_or_init(|| {
            let mut names: Vec<&'static str> = Vec::with_capacity(FEATURE_LEN);
            for c in CHANNELS {
                names.push(Box::leak(format!("{c}_mean").into_boxed_str()));
                names.push(Box::leak(format!("{c}_std").into_boxed_str()));
            }
            names.extend(["r_minus_g", "erythema_index", "altitude_km", "age_term"]);
            names
        })
        .clone()
}

/// Hex SHA-256 of the versioned slot names; bundles record it to detect layout drift.
pub fn layout_hash() -> String {
    let mut h = Sha256::new();
    h.update(FEATURE_VERSION.to_le_bytes());
    for n in feature_names() {
        h.update(n.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn pixel_channels(p: [u8; 3]) -> [f64; 12] {
    let lab = rgb_to_lab(p);
    let ycc = rgb_to_ycbcr(p);
    let hsv = rgb_to_hsv(p);
    [
        p[0] as f64, p[1] as f64, p[2] as f64, lab[0], lab[1], lab[2], ycc[0], ycc[1], ycc[2], hsv[0], hsv[1], hsv[2],
    ]
}

fn linear_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return (lo, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Circular mean (degrees in `[0, 360)`) and circular standard deviation in degrees.
fn circular_stats(degrees: &[f64]) -> (f64, f64) {
    let (lo, hi) = degrees.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return (lo, 0.0);
    }
    let n = degrees.len() as f64;
    let (s, c) = degrees.iter().fold((0.0, 0.0), |(s, c), d| {
        let r = d.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let (s, c) = (s / n, c / n);
    let mean = s.atan2(c).to_degrees().rem_euclid(360.0);
    let r = (s * s + c * c).sqrt().min(1.0);
    let std = if r <= 0.0 { 180.0 } else { (-2.0 * r.ln()).max(0.0).sqrt().to_degrees() };
    (if mean >= 360.0 { 0.0 } else { mean }, std)
}

/// Colour statistics over the ROI pixels.
pub fn extract(img: &ImageRgb8, roi: &RegionMask, region: Region, meta: Metadata) -> Result<FeatureVector, FeatureError> {
    if roi.width() != img.width() || roi.height() != img.height() {
        return Err(FeatureError::DimensionMismatch {
            mask_w: roi.width(),
            mask_h: roi.height(),
            width: img.width(),
            height: img.height(),
        });
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 12];
    let mut erythema = Vec::new();
    for (p, &inside) in img.pixels().zip(roi.bits()) {
        if !inside {
            continue;
        }
        for (col, v) in columns.iter_mut().zip(pixel_channels(p)) {
            col.push(v);
        }
        erythema.push(((p[0] as f64 + 1.0) / (p[1] as f64 + 1.0)).log10());
    }
    if erythema.is_empty() {
        return Ok(FeatureVector::invalid(region));
    }
    let mut values = Vec::with_capacity(FEATURE_LEN);
    for (i, col) in columns.iter().enumerate() {
        let (m, s) = if i == HUE { circular_stats(col) } else { linear_stats(col) };
        values.push(m);
        values.push(s);
    }
    values.push(values[0] - values[2]);
    values.push(linear_stats(&erythema).0);
    values.push(meta.altitude_m / 1000.0);
    values.push(meta.age_years / 100.0);
    debug_assert_eq!(values.len(), FEATURE_LEN);
    Ok(FeatureVector { values, region, valid: true })
}

/// CSV header for feature rows: `patient_id,region,valid,<slot names>`.
pub fn csv_header() -> String {
    let mut cols = vec!["patient_id", "region", "valid"];
    cols.extend(feature_names());
    cols.join(",")
}

pub fn csv_row(patient_id: &str, fv: &FeatureVector) -> String {
    let mut cols = vec![patient_id.to_string(), fv.region.to_string(), (fv.valid as u8).to_string()];
    cols.extend(fv.values.iter().map(|v| v.to_string()));
    cols.join(",")
}
