//! Screening one patient with a trained bundle.

use serde::{Deserialize, Serialize};

use super::train::extract_patient;
use super::{PipelineConfig, PipelineError};
use crate::features::{FeatureVector, Metadata, Region};
use crate::imaging::ImageRgb8;
use crate::models::{
    classify, diagnose, fuse_available, predict_hb, CalibrationParams, Demographics, ModelBundle, ModelError, Severity,
    ThresholdTable,
};
use crate::segment::NetSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: Region,
    pub class: Option<Severity>,
    pub probabilities: Option<[f64; 3]>,
    pub roi_area_fraction: f64,
    pub features: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub regions: Vec<RegionReport>,
    pub fused_class: Severity,
    pub raw_hb: f64,
    /// Set when at least one region was missing or unusable.
    pub reduced_confidence: bool,
    pub bundle_version: u32,
}

/// Classifies each usable region, fuses the labels and regresses Hb.
pub fn screen(
    images: &[Option<ImageRgb8>; 3],
    meta: Metadata,
    bundle: &ModelBundle,
    cfg: &PipelineConfig,
    net: Option<&NetSpec>,
) -> Result<ScreeningResult, PipelineError> {
    let (features, areas) = extract_patient(images, meta, cfg, net)?;
    screen_features(features, areas, bundle)
}

/// Screening from already extracted region vectors.
pub fn screen_features(features: [FeatureVector; 3], areas: [f64; 3], bundle: &ModelBundle) -> Result<ScreeningResult, PipelineError> {
    let mut regions = Vec::with_capacity(3);
    let mut classes = [None; 3];
    for (fv, region) in features.iter().zip(Region::ALL) {
        let c = if fv.valid { Some(classify(bundle.classifier(region), fv)?) } else { None };
        classes[region.index()] = c.map(|c| c.class);
        regions.push(RegionReport {
            region,
            class: c.map(|c| c.class),
            probabilities: c.map(|c| c.probabilities),
            roi_area_fraction: areas[region.index()],
            features: fv.clone(),
        });
    }
    let fused_class = fuse_available(classes[0], classes[1], classes[2]).ok_or(ModelError::NoValidRegions)?;
    let pred = predict_hb(bundle, &features, fused_class)?;
    Ok(ScreeningResult {
        regions,
        fused_class,
        raw_hb: pred.raw_hb,
        reduced_confidence: pred.reduced_confidence,
        bundle_version: bundle.bundle_version,
    })
}

/// Applies the patient's calibration and diagnoses the calibrated value.
pub fn finalize(
    raw_hb: f64,
    calibration: &CalibrationParams,
    who: &Demographics,
    thresholds: &ThresholdTable,
) -> Result<(f64, Severity), ModelError> {
    let hb = calibration.apply(raw_hb);
    Ok((hb, diagnose(hb, who, thresholds)?))
}
