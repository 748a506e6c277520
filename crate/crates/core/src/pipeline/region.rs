//! Per-photograph processing: illumination, contrast, glare, ROI and features.

use super::{BackendKind, PipelineConfig, PipelineError};
use crate::features::{extract, FeatureVector, Metadata, Region};
use crate::imaging::{convert_back, convert_color, ColorSpaceId, ImageRgb8, PlaneF32};
use crate::preprocess::{adaptive_threshold, clahe, correct_illumination, crf_refine, morph, MorphOp, RegionMask};
use crate::segment::{select_roi, slic, ColorProfile, LabelMap, NetSpec, Tensor3};

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// Input after sclera white balance (conjunctiva only; otherwise a copy).
    pub corrected: ImageRgb8,
    /// `corrected` with CLAHE applied to luma; drives clustering only.
    pub enhanced: ImageRgb8,
    /// Specular highlights found in `corrected`.
    pub glare: RegionMask,
    /// Sclera used as the white reference, when one was found.
    pub sclera: Option<RegionMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmented {
    /// SLIC labels (absent for the network backend).
    pub labels: Option<LabelMap>,
    /// Final ROI after CRF, morphology and glare removal.
    pub mask: RegionMask,
    /// Area fraction of the raw colour selection.
    pub area_fraction: f64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionAnalysis {
    pub region: Region,
    pub preprocessed: Preprocessed,
    pub segmented: Segmented,
    pub features: FeatureVector,
}

impl RegionAnalysis {
    pub fn roi_area_fraction(&self) -> f64 {
        self.segmented.mask.area_fraction()
    }
}

fn slic_select(img: &ImageRgb8, lab: &[PlaneF32; 3], profile: &ColorProfile, cfg: &PipelineConfig) -> Result<(LabelMap, RegionMask, f64, bool), PipelineError> {
    let k = cfg.slic.k.min(img.len());
    let labels = slic(&convert_color(img, ColorSpaceId::CieLab), k, cfg.slic.compactness, cfg.slic.iters)?;
    let sel = select_roi(&labels, lab, profile)?;
    Ok((labels, sel.mask, sel.area_fraction, sel.low_confidence))
}

pub fn preprocess_image(img: &ImageRgb8, region: Region, cfg: &PipelineConfig) -> Result<Preprocessed, PipelineError> {
    let mut sclera = None;
    let mut corrected = img.clone();
    if region == Region::Conjunctiva && cfg.illumination.enabled {
        let lab = convert_color(img, ColorSpaceId::CieLab);
        let (_, mask, _, low) = slic_select(img, &lab, &cfg.illumination.sclera, cfg)?;
        if !low && !mask.is_empty() {
            corrected = correct_illumination(img, &mask, cfg.illumination.target_white)?;
            sclera = Some(mask);
        }
    }
    let [y, cb, cr] = convert_color(&corrected, ColorSpaceId::YCbCr);
    let glare = if cfg.glare.enabled {
        adaptive_threshold(&y, cfg.glare.window, cfg.glare.offset)?
    } else {
        RegionMask::empty(img.width(), img.height())
    };
    let enhanced = if img.width() >= 2 * cfg.clahe.tiles_x && img.height() >= 2 * cfg.clahe.tiles_y {
        convert_back(&[clahe(&y, &cfg.clahe)?, cb, cr], ColorSpaceId::YCbCr)?
    } else {
        corrected.clone()
    };
    Ok(Preprocessed { corrected, enhanced, glare, sclera })
}

fn colour_likelihood(lab: &[PlaneF32; 3], profile: &ColorProfile, softness: f64) -> Vec<f64> {
    (0..lab[0].len())
        .map(|i| {
            let d = profile.distance([lab[0].data()[i] as f64, lab[1].data()[i] as f64, lab[2].data()[i] as f64]);
            1.0 / (1.0 + ((d - profile.max_distance) / softness).exp())
        })
        .collect()
}

pub fn segment_image(pre: &Preprocessed, region: Region, cfg: &PipelineConfig, net: Option<&NetSpec>) -> Result<Segmented, PipelineError> {
    let img = &pre.corrected;
    let (w, h) = (img.width(), img.height());
    let profile = cfg.profiles.get(region);
    let lab = convert_color(img, ColorSpaceId::CieLab);

    let (labels, prior, area_fraction, low_confidence) = match (cfg.segmentation.backend, net) {
        (BackendKind::Net, Some(net)) => {
            let prob = net.forward(&Tensor3::from_image(&pre.enhanced))?;
            let prior: Vec<f64> = prob.data().iter().map(|&p| p as f64).collect();
            let frac = prior.iter().filter(|&&p| p > 0.5).count() as f64 / prior.len() as f64;
            (None, prior, frac, frac < profile.min_area_fraction)
        }
        (BackendKind::Net, None) => return Err(PipelineError::Config("net backend selected but no network loaded".into())),
        (BackendKind::Slic, _) => {
            let k = cfg.slic.k.min(img.len());
            let labels = slic(&convert_color(&pre.enhanced, ColorSpaceId::CieLab), k, cfg.slic.compactness, cfg.slic.iters)?;
            let sel = select_roi(&labels, &lab, profile)?;
            let prior = sel.mask.bits().iter().map(|&b| if b { 0.75 } else { 0.25 }).collect();
            (Some(labels), prior, sel.area_fraction, sel.low_confidence)
        }
    };
    if low_confidence {
        return Ok(Segmented { labels, mask: RegionMask::empty(w, h), area_fraction, low_confidence });
    }

    let colour = colour_likelihood(&lab, profile, cfg.crf.softness);
    let unary: Vec<f32> = prior.iter().zip(&colour).map(|(p, c)| (0.5 * p + 0.5 * c) as f32).collect();
    let unary = PlaneF32::new(w, h, unary)?;
    let mut mask = crf_refine(&unary, cfg.crf.weight, cfg.crf.iters)?;
    if cfg.morph.open {
        mask = morph(&mask, MorphOp::Open, cfg.morph.element);
    }
    if cfg.morph.close {
        mask = morph(&mask, MorphOp::Close, cfg.morph.element);
    }
    let glare = morph(&pre.glare, MorphOp::Dilate, cfg.morph.element);
    mask = mask.minus(&glare);
    let low_confidence = mask.area_fraction() < profile.min_area_fraction;
    if low_confidence {
        mask = RegionMask::empty(w, h);
    }
    Ok(Segmented { labels, mask, area_fraction, low_confidence })
}

/// Runs every stage on one photograph. A photograph whose ROI cannot be
/// found yields an invalid feature vector rather than an error.
pub fn analyse_region(
    img: &ImageRgb8,
    region: Region,
    meta: Metadata,
    cfg: &PipelineConfig,
    net: Option<&NetSpec>,
) -> Result<RegionAnalysis, PipelineError> {
    let preprocessed = preprocess_image(img, region, cfg)?;
    let segmented = segment_image(&preprocessed, region, cfg, net)?;
    let features = extract(&preprocessed.corrected, &segmented.mask, region, meta)?;
    Ok(RegionAnalysis { region, preprocessed, segmented, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_patient;

    fn iou(a: &RegionMask, b: &RegionMask) -> f64 {
        let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
        let union = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x || **y).count();
        inter as f64 / union as f64
    }

    #[test]
    fn finds_planted_rois() {
        let cfg = PipelineConfig::default();
        for seed in [1, 2] {
            for i in 0..4 {
                let p = synth_patient(seed, i);
                for r in Region::ALL {
                    let a = analyse_region(&p.images[r.index()], r, Metadata::default(), &cfg, None).unwrap();
                    assert!(a.features.valid, "patient {i} {r}");
                    let score = iou(&a.segmented.mask, &p.truth.masks[r.index()]);
                    assert!(score > 0.85, "patient {i} {r}: IoU {score}");
                }
            }
        }
    }

    #[test]
    fn sclera_is_found_and_glare_removed() {
        let cfg = PipelineConfig::default();
        let p = synth_patient(3, 0);
        let pre = preprocess_image(&p.images[1], Region::Conjunctiva, &cfg).unwrap();
        let sclera = pre.sclera.expect("sclera found");
        assert!(iou(&sclera, &p.truth.sclera) > 0.7);
        let a = analyse_region(&p.images[0], Region::Nailbed, Metadata::default(), &cfg, None).unwrap();
        let leaked = a.segmented.mask.bits().iter().zip(p.truth.glare.bits()).filter(|(m, g)| **m && **g).count();
        assert_eq!(leaked, 0);
    }

    #[test]
    fn blank_photo_gives_invalid_vector() {
        let img = ImageRgb8::filled(64, 64, [20, 90, 200]);
        let a = analyse_region(&img, Region::Tongue, Metadata::default(), &PipelineConfig::default(), None).unwrap();
        assert!(!a.features.valid);
        assert!(a.segmented.low_confidence);
    }
}
