//! Corpus feature extraction and bundle training.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::region::analyse_region;
use super::{BackendKind, PipelineConfig, PipelineError};
use crate::dataset::{augment_images, balance_to_parity, parse_plan, CorpusEntry, LabelledSample, TrainingFold};
use crate::features::{FeatureVector, Metadata, Region, FEATURE_LEN, FEATURE_VERSION};
use crate::imaging::{GeometricOp, ImageRgb8};
use crate::models::{
    diagnose, train_classifier, train_regressor, ClassifierConfig, ModelBundle, ModelError, Severity, ThresholdTable,
};
use crate::par;
use crate::segment::{read_pnet, NetSpec};

/// One patient as read from a corpus directory.
pub type CorpusPatient = (CorpusEntry, [Option<ImageRgb8>; 3]);

pub fn load_net(cfg: &PipelineConfig) -> Result<Option<NetSpec>, PipelineError> {
    match (&cfg.segmentation.backend, &cfg.segmentation.net_path) {
        (BackendKind::Net, Some(path)) => {
            let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            Ok(Some(read_pnet(&bytes)?))
        }
        _ => Ok(None),
    }
}

/// Feature vectors and ROI area fractions for the three regions. A missing
/// image or an ROI that cannot be found gives an invalid vector.
pub fn extract_patient(
    images: &[Option<ImageRgb8>; 3],
    meta: Metadata,
    cfg: &PipelineConfig,
    net: Option<&NetSpec>,
) -> Result<([FeatureVector; 3], [f64; 3]), PipelineError> {
    let mut out = Region::ALL.map(FeatureVector::invalid);
    let mut areas = [0.0; 3];
    for region in Region::ALL {
        if let Some(img) = &images[region.index()] {
            let a = analyse_region(img, region, meta, cfg, net)?;
            areas[region.index()] = a.roi_area_fraction();
            out[region.index()] = a.features;
        }
    }
    Ok((out, areas))
}

fn metadata(e: &CorpusEntry) -> Metadata {
    Metadata { altitude_m: e.altitude_m, age_years: e.age_years }
}

/// Extracts one labelled sample per patient, plus one per augmentation op
/// when `augment` is true. Patients are processed in parallel; the output
/// order follows the input.
pub fn extract_corpus(
    patients: &[CorpusPatient],
    cfg: &PipelineConfig,
    thresholds: &ThresholdTable,
    net: Option<&NetSpec>,
    augment: bool,
) -> Result<Vec<LabelledSample>, PipelineError> {
    let plan: Vec<GeometricOp> = if augment && !cfg.augment.is_empty() { parse_plan(&cfg.augment)? } else { Vec::new() };
    let per_patient = par::map_slice(patients, |(entry, images)| -> Result<Vec<LabelledSample>, PipelineError> {
        let class = diagnose(entry.hb, &entry.demographics(), thresholds)?;
        let mut variants = vec![images.clone()];
        for i in 0..plan.len() {
            let mut v: [Option<ImageRgb8>; 3] = [None, None, None];
            for (slot, img) in v.iter_mut().zip(images) {
                if let Some(img) = img {
                    *slot = Some(augment_images(img, &plan[i..=i])?.remove(0));
                }
            }
            variants.push(v);
        }
        variants
            .iter()
            .map(|imgs| {
                Ok(LabelledSample {
                    patient_id: entry.patient_id.clone(),
                    features: extract_patient(imgs, metadata(entry), cfg, net)?.0,
                    hb: entry.hb,
                    class,
                    timestamp: 0,
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in per_patient {
        out.extend(r?);
    }
    Ok(out)
}

/// Stratified patient-level hold-out over corpus entries; returns the
/// held-out patient ids.
pub fn split_patient_ids(classes: &[(String, Severity)], test_fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = BTreeSet::new();
    for class in Severity::ALL {
        let mut ids: Vec<&String> = classes.iter().filter(|(_, c)| *c == class).map(|(id, _)| id).collect();
        ids.sort();
        ids.dedup();
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * test_fraction).round() as usize;
        held.extend(ids.into_iter().take(n_test).cloned());
    }
    held
}

fn region_means(samples: &[LabelledSample]) -> Vec<f64> {
    let mut sums = vec![0.0; 3 * FEATURE_LEN];
    let mut counts = [0usize; 3];
    for s in samples {
        for (r, fv) in s.features.iter().enumerate() {
            if fv.valid {
                counts[r] += 1;
                for (acc, v) in sums[r * FEATURE_LEN..(r + 1) * FEATURE_LEN].iter_mut().zip(&fv.values) {
                    *acc += v;
                }
            }
        }
    }
    for r in 0..3 {
        let n = counts[r].max(1) as f64;
        sums[r * FEATURE_LEN..(r + 1) * FEATURE_LEN].iter_mut().for_each(|v| *v /= n);
    }
    sums
}

/// Trains a bundle on a training fold: one classifier per region on that
/// region's valid vectors, one robust regressor per class on the
/// concatenated vectors (invalid regions imputed with fold means). Both
/// stages are balanced in feature space first.
pub fn train_bundle(
    fold: &TrainingFold,
    cfg: &PipelineConfig,
    thresholds: &ThresholdTable,
    bundle_version: u32,
    trained_at: i64,
    held_out: Vec<String>,
) -> Result<ModelBundle, PipelineError> {
    let samples = fold.samples();
    if samples.is_empty() {
        return Err(ModelError::InvalidData("training fold is empty".into()).into());
    }
    let mut classifiers = Vec::with_capacity(3);
    for region in Region::ALL {
        let (rows, labels): (Vec<Vec<f64>>, Vec<Severity>) = samples
            .iter()
            .filter(|s| s.features[region.index()].valid)
            .map(|s| (s.features[region.index()].values.clone(), s.class))
            .unzip();
        let (rows, labels) = balance_to_parity(&rows, &labels, cfg.balance, 0, cfg.seed)?;
        let ccfg = ClassifierConfig { seed: cfg.classifier.seed ^ region.index() as u64, ..cfg.classifier };
        classifiers.push(train_classifier(&rows, &labels, &ccfg)?);
    }

    let means = region_means(samples);
    let mut rows = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples.iter().filter(|s| s.features.iter().any(|f| f.valid)) {
        let mut row = Vec::with_capacity(3 * FEATURE_LEN + 1);
        for (r, fv) in s.features.iter().enumerate() {
            if fv.valid {
                row.extend_from_slice(&fv.values);
            } else {
                row.extend_from_slice(&means[r * FEATURE_LEN..(r + 1) * FEATURE_LEN]);
            }
        }
        row.push(s.hb);
        rows.push(row);
        labels.push(s.class);
    }
    // the target rides along as the last column so oversampling interpolates it too
    let (rows, labels) = balance_to_parity(&rows, &labels, cfg.balance, 3 * FEATURE_LEN + 2, cfg.seed.wrapping_add(1))?;
    let mut regressors = Vec::with_capacity(3);
    for class in Severity::ALL {
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = rows
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == class)
            .map(|(r, _)| (r[..3 * FEATURE_LEN].to_vec(), r[3 * FEATURE_LEN]))
            .unzip();
        if x.is_empty() {
            return Err(ModelError::MissingClass(class).into());
        }
        regressors.push(train_regressor(&x, &y, class, &cfg.regressor)?);
    }

    let bundle = ModelBundle {
        classifiers: classifiers.try_into().expect("three regions"),
        regressors: regressors.try_into().expect("three classes"),
        thresholds: thresholds.clone(),
        feature_version: FEATURE_VERSION,
        bundle_version,
        trained_at,
        held_out,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Reads a corpus directory, holds out a stratified patient split, trains on
/// the rest and returns the bundle with the held-out samples.
pub fn train_from_corpus(
    dir: &Path,
    cfg: &PipelineConfig,
    bundle_version: u32,
    trained_at: i64,
) -> Result<(ModelBundle, Vec<LabelledSample>), PipelineError> {
    let thresholds = cfg.threshold_table()?;
    let net = load_net(cfg)?;
    let patients = crate::dataset::read_corpus(dir)?;
    let classes = patients
        .iter()
        .map(|(e, _)| Ok((e.patient_id.clone(), diagnose(e.hb, &e.demographics(), &thresholds)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let held = split_patient_ids(&classes, cfg.test_fraction, cfg.seed);
    let (test, train): (Vec<CorpusPatient>, Vec<CorpusPatient>) = patients.into_iter().partition(|(e, _)| held.contains(&e.patient_id));
    let train_samples = extract_corpus(&train, cfg, &thresholds, net.as_ref(), true)?;
    let test_samples = extract_corpus(&test, cfg, &thresholds, net.as_ref(), false)?;
    let bundle = train_bundle(&TrainingFold::whole(train_samples), cfg, &thresholds, bundle_version, trained_at, held.into_iter().collect())?;
    Ok((bundle, test_samples))
}
