//! Training-set construction: augmentation plans, patient-level splits,
//! feature-space balancing and the synthetic oracle corpus.

mod balance;
mod synth;

pub use balance::{balance_to_parity, rose, smote, Balancer};
pub use synth::{
    read_corpus, read_labels, synth_corpus, synth_patient, write_corpus, CorpusEntry, SynthPatient, SynthRoi, LABELS_FILE,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::imaging::{transform_geometric, Affine2x3, GeometricOp, ImageRgb8, ImagingError};
use crate::models::Severity;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("augmentation plan is empty")]
    EmptyPlan,
    #[error("augmentation op '{0}' is not allowed: only geometric ops (flip_h, flip_v, rot90, affine) are permitted")]
    ProhibitedOp(String),
    #[error("cannot parse augmentation op '{0}'")]
    BadOp(String),
    #[error("minority class has {got} rows; need at least 2 and k < rows (k = {k})")]
    MinorityTooSmall { got: usize, k: usize },
    #[error("no rows to sample from")]
    EmptyRows,
    #[error("rows must be finite and of equal length")]
    Ragged,
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// Directives that would smooth or diffuse pixel colour. They are named here
// only so the parser can say why they are refused.
const PROHIBITED: [&str; 6] = ["blur", "gaussian_blur", "median", "diffusion", "smooth", "denoise"];

/// Parses one op: `flip_h`, `flip_v`, `rot90`, `identity` or
/// `affine:a,b,c,d,e,f` (row-major 2×3, input to output).
pub fn parse_op(s: &str) -> Result<GeometricOp, DatasetError> {
    let s = s.trim();
    let (name, args) = match s.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a)),
        None => (s, None),
    };
    let lname = name.to_ascii_lowercase();
    if PROHIBITED.iter().any(|p| lname.contains(p)) {
        return Err(DatasetError::ProhibitedOp(s.to_string()));
    }
    match (lname.as_str(), args) {
        ("flip_h", None) => Ok(GeometricOp::FlipH),
        ("flip_v", None) => Ok(GeometricOp::FlipV),
        ("rot90", None) => Ok(GeometricOp::Rot90),
        ("identity", None) => Ok(GeometricOp::Affine(Affine2x3::IDENTITY)),
        ("affine", Some(a)) => {
            let v: Vec<f64> = a
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| DatasetError::BadOp(s.to_string()))?;
            let m: [f64; 6] = v.try_into().map_err(|_| DatasetError::BadOp(s.to_string()))?;
            if m.iter().any(|x| !x.is_finite()) {
                return Err(DatasetError::BadOp(s.to_string()));
            }
            Ok(GeometricOp::Affine(Affine2x3(m)))
        }
        _ => Err(DatasetError::BadOp(s.to_string())),
    }
}

pub fn parse_plan<S: AsRef<str>>(ops: &[S]) -> Result<Vec<GeometricOp>, DatasetError> {
    if ops.is_empty() {
        return Err(DatasetError::EmptyPlan);
    }
    ops.iter().map(|s| parse_op(s.as_ref())).collect()
}

/// One output image per plan entry.
pub fn augment_images(img: &ImageRgb8, plan: &[GeometricOp]) -> Result<Vec<ImageRgb8>, DatasetError> {
    if plan.is_empty() {
        return Err(DatasetError::EmptyPlan);
    }
    plan.iter().map(|op| transform_geometric(img, op).map_err(DatasetError::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledSample {
    pub patient_id: String,
    /// Nailbed, conjunctiva, tongue.
    pub features: [FeatureVector; 3],
    pub hb: f64,
    pub class: Severity,
    /// Unix seconds.
    pub timestamp: i64,
}

/// Samples that may be balanced and trained on. Only obtainable from a split
/// (or explicitly as a whole dataset for final fits), so synthetic rows
/// cannot reach an evaluation fold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingFold {
    samples: Vec<LabelledSample>,
}

impl TrainingFold {
    /// Uses every sample for training; nothing is held out.
    pub fn whole(samples: Vec<LabelledSample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[LabelledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: TrainingFold,
    pub test: Vec<LabelledSample>,
    pub test_patients: Vec<String>,
}

/// Stratified patient-level split. Patients are stratified by the class of
/// their first sample; every sample of a patient lands in the same fold.
pub fn split_by_patient(samples: Vec<LabelledSample>, test_fraction: f64, seed: u64) -> Split {
    let mut first_class: BTreeMap<String, Severity> = BTreeMap::new();
    for s in &samples {
        first_class.entry(s.patient_id.clone()).or_insert(s.class);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = std::collections::BTreeSet::new();
    for class in Severity::ALL {
        let mut ids: Vec<&String> = first_class.iter().filter(|(_, c)| **c == class).map(|(id, _)| id).collect();
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * test_fraction.clamp(0.0, 1.0)).round() as usize;
        held.extend(ids.into_iter().take(n_test).cloned());
    }
    let (test, train): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| held.contains(&s.patient_id));
    Split { train: TrainingFold { samples: train }, test, test_patients: held.into_iter().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Region;

    fn multiset(img: &ImageRgb8) -> Vec<[u8; 3]> {
        let mut v: Vec<_> = img.pixels().collect();
        v.sort();
        v
    }

    #[test]
    fn flips_and_rotation_preserve_pixels() {
        let img = ImageRgb8::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, (x * y) as u8]);
        let plan = parse_plan(&["flip_h", "flip_v", "rot90"]).unwrap();
        let out = augment_images(&img, &plan).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(multiset(o), multiset(&img));
        }
    }

    #[test]
    fn identity_affine_is_exact() {
        let img = ImageRgb8::from_fn(7, 4, |x, y| [x as u8, y as u8, 9]);
        let out = augment_images(&img, &parse_plan(&["affine:1,0,0,0,1,0"]).unwrap()).unwrap();
        assert_eq!(out[0], img);
    }

    #[test]
    fn smoothing_directives_rejected() {
        assert!(matches!(parse_plan(&["flip_h", "gaussian_blur:3"]), Err(DatasetError::ProhibitedOp(_))));
        assert!(matches!(parse_op("diffusion"), Err(DatasetError::ProhibitedOp(_))));
        assert!(matches!(parse_op("affine:1,2"), Err(DatasetError::BadOp(_))));
        assert!(matches!(parse_plan::<&str>(&[]), Err(DatasetError::EmptyPlan)));
    }

    fn sample(id: &str, class: Severity) -> LabelledSample {
        LabelledSample {
            patient_id: id.into(),
            features: Region::ALL.map(FeatureVector::invalid),
            hb: 10.0,
            class,
            timestamp: 0,
        }
    }

    #[test]
    fn split_keeps_patients_whole_and_stratifies() {
        let mut samples = Vec::new();
        for i in 0..50 {
            let class = Severity::from_index(i % 3).unwrap();
            samples.push(sample(&format!("p{i}"), class));
            samples.push(sample(&format!("p{i}"), class));
        }
        let split = split_by_patient(samples, 0.2, 4);
        let train_ids: std::collections::HashSet<_> = split.train.samples().iter().map(|s| &s.patient_id).collect();
        assert!(split.test.iter().all(|s| !train_ids.contains(&s.patient_id)));
        assert_eq!(split.train.len() + split.test.len(), 100);
        for class in Severity::ALL {
            let n = split.test.iter().filter(|s| s.class == class).count() / 2;
            assert!((3..=4).contains(&n), "{class}: {n}");
        }
    }
}
