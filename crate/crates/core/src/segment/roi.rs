use serde::{Deserialize, Serialize};

use super::{LabelMap, SegmentError};
use crate::imaging::PlaneF32;
use crate::preprocess::RegionMask;

/// Expected ROI colour: a Lab target with a Euclidean acceptance radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorProfile {
    pub target: [f64; 3],
    pub max_distance: f64,
    pub min_area_fraction: f64,
}

impl ColorProfile {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.target.iter().any(|v| !v.is_finite()) || !(0.0..=100.0).contains(&self.target[0]) {
            return Err(SegmentError::InvalidProfile(format!("target {:?}", self.target)));
        }
        if !(self.max_distance > 0.0 && self.max_distance.is_finite()) {
            return Err(SegmentError::InvalidProfile(format!("max_distance {}", self.max_distance)));
        }
        if !(self.min_area_fraction > 0.0 && self.min_area_fraction <= 1.0) {
            return Err(SegmentError::InvalidProfile(format!(
                "min_area_fraction {}",
                self.min_area_fraction
            )));
        }
        Ok(())
    }

    pub fn distance(&self, lab: [f64; 3]) -> f64 {
        (0..3).map(|c| (lab[c] - self.target[c]).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoiSelection {
    /// Selected pixels; empty when the selection was too small.
    pub mask: RegionMask,
    /// Set when the matching clusters covered less than the minimum area.
    pub low_confidence: bool,
    /// Labels of clusters within the profile radius.
    pub clusters: Vec<u32>,
    /// Area fraction covered by the matching clusters (before the minimum-area rule).
    pub area_fraction: f64,
}

/// Mean Lab colour of every cluster.
pub fn cluster_mean_lab(labels: &LabelMap, lab: &[PlaneF32; 3]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0f64; 4]; labels.k()];
    for (i, &l) in labels.labels().iter().enumerate() {
        let a = &mut acc[l as usize];
        for c in 0..3 {
            a[c] += lab[c].data()[i] as f64;
        }
        a[3] += 1.0;
    }
    acc.into_iter().map(|a| [a[0] / a[3], a[1] / a[3], a[2] / a[3]]).collect()
}

pub fn select_roi(labels: &LabelMap, lab: &[PlaneF32; 3], profile: &ColorProfile) -> Result<RoiSelection, SegmentError> {
    profile.validate()?;
    for p in lab {
        if p.width() != labels.width() || p.height() != labels.height() {
            return Err(SegmentError::DimensionMismatch(format!(
                "label map {}x{} vs plane {}x{}",
                labels.width(),
                labels.height(),
                p.width(),
                p.height()
            )));
        }
    }
    let means = cluster_mean_lab(labels, lab);
    let chosen: Vec<bool> = means.iter().map(|m| profile.distance(*m) <= profile.max_distance).collect();
    let clusters = (0..labels.k() as u32).filter(|&l| chosen[l as usize]).collect();
    let bits: Vec<bool> = labels.labels().iter().map(|&l| chosen[l as usize]).collect();
    let mask = RegionMask::from_bits(labels.width(), labels.height(), bits).expect("shape");
    let area_fraction = mask.area_fraction();
    let low_confidence = area_fraction < profile.min_area_fraction;
    Ok(RoiSelection {
        mask: if low_confidence { RegionMask::empty(labels.width(), labels.height()) } else { mask },
        low_confidence,
        clusters,
        area_fraction,
    })
}
