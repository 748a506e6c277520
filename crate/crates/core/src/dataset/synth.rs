//! Synthetic oracle corpus: one photograph per region with a planted
//! haemoglobin value driving the redness of an elliptical ROI.
//!
//! ROI colour (CIELab) for planted `hb` g/dL, before per-patient jitter:
//!
//! | region      | L*                    | a*              | b* |
//! |-------------|-----------------------|-----------------|----|
//! | nailbed     | 55 + 1.5·(17 − hb)    | 10 + 2.5·hb     | 6  |
//! | conjunctiva | 57 + 1.5·(17 − hb)    | 12 + 2.5·hb     | 4  |
//! | tongue      | 51 + 1.5·(17 − hb)    | 14 + 2.5·hb     | 8  |
//!
//! Backgrounds are skin tones (L* 40–75, a* 10–18, b* 20–30). The conjunctiva
//! image also shows a sclera (L* 92, a* 0, b* 3) and carries a per-channel
//! illumination cast; the nailbed carries a small specular highlight.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::features::Region;
use crate::imaging::{lab_to_rgb, read_image, write_png, ImageRgb8};
use crate::models::{Demographics, Sex};
use crate::par;
use crate::preprocess::RegionMask;

pub const LABELS_FILE: &str = "labels.csv";
const SIZE: usize = 96;
const HB_RANGE: (f64, f64) = (5.0, 17.0);
const PIXEL_NOISE: f64 = 3.0;
const SCLERA_LAB: [f64; 3] = [92.0, 0.0, 3.0];

/// Planted ROI colour for a region, without jitter.
pub fn planted_lab(region: Region, hb: f64) -> [f64; 3] {
    let (dl, da, b) = match region {
        Region::Nailbed => (0.0, 0.0, 6.0),
        Region::Conjunctiva => (2.0, 2.0, 4.0),
        Region::Tongue => (-4.0, 4.0, 8.0),
    };
    [55.0 + dl + 1.5 * (17.0 - hb), 10.0 + da + 2.5 * hb, b]
}

/// Ground-truth masks of the rendered patient.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRoi {
    /// Nailbed, conjunctiva, tongue.
    pub masks: [RegionMask; 3],
    pub sclera: RegionMask,
    pub glare: RegionMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPatient {
    pub id: String,
    /// Nailbed, conjunctiva, tongue.
    pub images: [ImageRgb8; 3],
    pub hb: f64,
    pub demographics: Demographics,
    pub altitude_m: f64,
    pub truth: SynthRoi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub patient_id: String,
    pub hb: f64,
    pub age_years: f64,
    pub sex: Sex,
    pub pregnant: bool,
    pub altitude_m: f64,
}

impl CorpusEntry {
    pub fn demographics(&self) -> Demographics {
        Demographics { age_years: self.age_years, sex: self.sex, pregnant: self.pregnant }
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> RegionMask {
    RegionMask::from_fn(SIZE, SIZE, |x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

fn render(layers: &[(&RegionMask, [u8; 3])], background: [u8; 3], gain: [f64; 3], rng: &mut ChaCha8Rng) -> ImageRgb8 {
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive sigma");
    ImageRgb8::from_fn(SIZE, SIZE, |x, y| {
        // later layers paint over earlier ones
        let base = layers.iter().rev().find(|(m, _)| m.get(x, y)).map_or(background, |(_, c)| *c);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = base[c] as f64 * gain[c] + noise.sample(rng);
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    })
}

/// Renders patient `index` of the corpus for `seed`. Each patient has its
/// own random stream, so patients can be generated independently.
pub fn synth_patient(seed: u64, index: usize) -> SynthPatient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let hb = rng.random_range(HB_RANGE.0..=HB_RANGE.1);
    let age_years = rng.random_range(5.0..70.0f64).round();
    let sex = if rng.random_bool(0.5) { Sex::Female } else { Sex::Male };
    let pregnant = sex == Sex::Female && (15.0..45.0).contains(&age_years) && rng.random_bool(0.2);
    let altitude_m = rng.random_range(0.0..2500.0f64).round();
    let skin = lab_to_rgb([rng.random_range(40.0..75.0), rng.random_range(10.0..18.0), rng.random_range(20.0..30.0)]);
    let jitter = Normal::new(0.0, 1.0).expect("unit sigma");

    let mut images = Vec::with_capacity(3);
    let mut masks = Vec::with_capacity(3);
    let mut sclera_mask = RegionMask::empty(SIZE, SIZE);
    let mut glare_mask = RegionMask::empty(SIZE, SIZE);
    for region in Region::ALL {
        let mut lab = planted_lab(region, hb);
        lab[0] += jitter.sample(&mut rng);
        lab[1] += jitter.sample(&mut rng);
        let roi_rgb = lab_to_rgb(lab);
        let (img, roi) = match region {
            Region::Conjunctiva => {
                let cx = 48.0 + rng.random_range(-4.0..4.0);
                let roi = ellipse(cx, 62.0 + rng.random_range(-3.0..3.0), rng.random_range(28.0..34.0), rng.random_range(12.0..16.0));
                let sclera = ellipse(cx, 28.0 + rng.random_range(-3.0..3.0), rng.random_range(24.0..30.0), rng.random_range(10.0..13.0)).minus(&roi);
                let gain = [0, 1, 2].map(|_| rng.random_range(0.9..1.1));
                let img = render(&[(&sclera, lab_to_rgb(SCLERA_LAB)), (&roi, roi_rgb)], skin, gain, &mut rng);
                sclera_mask = sclera;
                (img, roi)
            }
            _ => {
                let roi = ellipse(
                    48.0 + rng.random_range(-6.0..6.0),
                    48.0 + rng.random_range(-6.0..6.0),
                    rng.random_range(24.0..30.0),
                    rng.random_range(18.0..26.0),
                );
                let g = rng.random_range(0.97..1.03);
                let mut layers = vec![(&roi, roi_rgb)];
                let glare;
                if region == Region::Nailbed {
                    let pts: Vec<(usize, usize)> = (0..SIZE * SIZE).filter(|i| roi.bits()[*i]).map(|i| (i % SIZE, i / SIZE)).collect();
                    let (gx, gy) = pts[rng.random_range(0..pts.len())];
                    glare = ellipse(gx as f64, gy as f64, 2.2, 2.2).minus(&roi.complement());
                    layers.push((&glare, [255, 255, 255]));
                    glare_mask = glare.clone();
                }
                let img = render(&layers, skin, [g; 3], &mut rng);
                let roi = if region == Region::Nailbed { roi.minus(&glare_mask) } else { roi };
                (img, roi)
            }
        };
        images.push(img);
        masks.push(roi);
    }
    SynthPatient {
        id: format!("{:04}", index + 1),
        images: images.try_into().expect("three regions"),
        hb,
        demographics: Demographics { age_years, sex, pregnant },
        altitude_m,
        truth: SynthRoi { masks: masks.try_into().expect("three regions"), sclera: sclera_mask, glare: glare_mask },
    }
}

pub fn synth_corpus(n_patients: usize, seed: u64) -> Vec<SynthPatient> {
    par::map_range(n_patients, |i| synth_patient(seed, i))
}

fn corpus_err(e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Corpus(e.to_string())
}

/// Writes `patient_<id>/{nailbed,conjunctiva,tongue}.png` and `labels.csv`.
pub fn write_corpus(dir: &Path, patients: &[SynthPatient]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(LABELS_FILE)).map_err(corpus_err)?;
    for p in patients {
        let pdir = dir.join(format!("patient_{}", p.id));
        fs::create_dir_all(&pdir)?;
        for (region, img) in Region::ALL.iter().zip(&p.images) {
            write_png(img, &pdir.join(format!("{region}.png")))?;
        }
        w.serialize(CorpusEntry {
            patient_id: p.id.clone(),
            hb: p.hb,
            age_years: p.demographics.age_years,
            sex: p.demographics.sex,
            pregnant: p.demographics.pregnant,
            altitude_m: p.altitude_m,
        })
        .map_err(corpus_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(dir: &Path) -> Result<Vec<CorpusEntry>, DatasetError> {
    let mut r = csv::Reader::from_path(dir.join(LABELS_FILE)).map_err(corpus_err)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let e: CorpusEntry = row.map_err(corpus_err)?;
        if !(e.hb > 0.0 && e.hb.is_finite()) {
            return Err(DatasetError::Corpus(format!("patient {}: hb must be positive", e.patient_id)));
        }
        out.push(e);
    }
    Ok(out)
}

/// Loads labels and whatever region images exist for each patient.
pub fn read_corpus(dir: &Path) -> Result<Vec<(CorpusEntry, [Option<ImageRgb8>; 3])>, DatasetError> {
    read_labels(dir)?
        .into_iter()
        .map(|e| {
            let pdir = dir.join(format!("patient_{}", e.patient_id));
            let mut imgs: [Option<ImageRgb8>; 3] = [None, None, None];
            for (slot, region) in imgs.iter_mut().zip(Region::ALL) {
                let path = pdir.join(format!("{region}.png"));
                if path.exists() {
                    *slot = Some(read_image(&path)?);
                }
            }
            Ok((e, imgs))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract, Metadata};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_corpus(3, 11), synth_corpus(3, 11));
        assert_ne!(synth_corpus(1, 11)[0].images, synth_corpus(1, 12)[0].images);
    }

    #[test]
    fn hb_range_and_ids() {
        for p in synth_corpus(40, 5) {
            assert!(p.hb >= HB_RANGE.0 && p.hb <= HB_RANGE.1);
            assert!(p.truth.masks.iter().all(|m| m.count() > 500));
        }
    }

    #[test]
    fn redder_roi_for_higher_hb() {
        let lo = planted_lab(Region::Tongue, 5.0);
        let hi = planted_lab(Region::Tongue, 17.0);
        assert!(hi[1] > lo[1] && hi[0] < lo[0]);
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn extracted_redness_tracks_planted_hb() {
        let corpus = synth_corpus(100, 21);
        let hb: Vec<f64> = corpus.iter().map(|p| p.hb).collect();
        for region in [Region::Nailbed, Region::Tongue] {
            let a: Vec<f64> = corpus
                .iter()
                .map(|p| {
                    let i = region.index();
                    extract(&p.images[i], &p.truth.masks[i], region, Metadata::default()).unwrap().feature("lab_a_mean").unwrap()
                })
                .collect();
            let r = pearson(&a, &hb);
            assert!(r >= 0.95, "{region}: r = {r}");
        }
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(2, 3);
        write_corpus(dir.path(), &corpus).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0.hb, corpus[1].hb);
        assert_eq!(back[1].1[2].as_ref().unwrap(), &corpus[1].images[2]);
    }
}
