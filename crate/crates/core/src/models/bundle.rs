//! Model bundle: one classifier per region, three per-class regressors and the
//! threshold table, plus a binary archive format.
//!
//! Archive layout (little endian):
//!
//! ```text
//! "HBMB" | u16 format version | u32 manifest length | manifest JSON | f64 blob
//! ```
//!
//! The manifest holds every scalar and the length of every numeric array;
//! the arrays themselves live in the blob in manifest order so weights
//! round-trip bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::classifier::ClassifierModel;
use super::regression::RegressorModel;
use super::thresholds::ThresholdTable;
use super::{ModelError, Severity};
use crate::features::{layout_hash, FeatureVector, Region, FEATURE_LEN, FEATURE_VERSION};

pub const BUNDLE_MAGIC: &[u8; 4] = b"HBMB";
pub const BUNDLE_FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    /// Indexed by [`Region::index`].
    pub classifiers: [ClassifierModel; 3],
    /// Indexed by [`Severity::index`].
    pub regressors: [RegressorModel; 3],
    pub thresholds: ThresholdTable,
    pub feature_version: u32,
    pub bundle_version: u32,
    /// Unix seconds.
    pub trained_at: i64,
    /// Patients held out for validation when the bundle was trained.
    pub held_out: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbPrediction {
    pub raw_hb: f64,
    pub reduced_confidence: bool,
}

impl ModelBundle {
    /// Bundle whose classifiers always answer `severe` and whose regressors
    /// return a fixed value per class. Useful as a placeholder before any
    /// training data exists.
    pub fn constant(hb: [f64; 3]) -> Self {
        let reg = |c: Severity| RegressorModel::intercept_only(c, 3 * FEATURE_LEN, hb[c.index()]);
        Self {
            classifiers: std::array::from_fn(|_| ClassifierModel::zeros(FEATURE_LEN)),
            regressors: [reg(Severity::Severe), reg(Severity::Mild), reg(Severity::NonAnaemic)],
            thresholds: ThresholdTable::default(),
            feature_version: FEATURE_VERSION,
            bundle_version: 1,
            trained_at: 0,
            held_out: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_version != FEATURE_VERSION {
            return Err(ModelError::VersionMismatch { got: self.feature_version, want: FEATURE_VERSION });
        }
        for c in &self.classifiers {
            if c.feature_version != self.feature_version {
                return Err(ModelError::VersionMismatch { got: c.feature_version, want: self.feature_version });
            }
            if c.input_len() != FEATURE_LEN || c.weights.len() != 3 * FEATURE_LEN || c.scales.len() != FEATURE_LEN {
                return Err(ModelError::Archive("classifier shape does not match the feature layout".into()));
            }
        }
        for (i, r) in self.regressors.iter().enumerate() {
            if r.class.index() != i {
                return Err(ModelError::Archive(format!("regressor slot {i} serves {}", r.class)));
            }
            if r.input_len() != 3 * FEATURE_LEN || r.feature_means.len() != 3 * FEATURE_LEN {
                return Err(ModelError::Archive("regressor shape does not match the feature layout".into()));
            }
            if !(r.tau > 0.0) || !r.intercept.is_finite() || r.coefficients.iter().any(|c| !c.is_finite()) {
                return Err(ModelError::Archive("regressor has non-finite weights or tau <= 0".into()));
            }
        }
        self.thresholds.validate()
    }

    pub fn regressor(&self, class: Severity) -> &RegressorModel {
        &self.regressors[class.index()]
    }

    pub fn classifier(&self, region: Region) -> &ClassifierModel {
        &self.classifiers[region.index()]
    }
}

/// Builds the 84-slot regression input, imputing invalid regions with the
/// regressor's training means.
pub fn regression_input(regressor: &RegressorModel, regions: &[FeatureVector; 3]) -> Result<(Vec<f64>, usize), ModelError> {
    let mut row = Vec::with_capacity(3 * FEATURE_LEN);
    let mut valid = 0;
    for (i, fv) in regions.iter().enumerate() {
        if fv.valid {
            if fv.values.len() != FEATURE_LEN {
                return Err(ModelError::LengthMismatch { got: fv.values.len(), want: FEATURE_LEN });
            }
            row.extend_from_slice(&fv.values);
            valid += 1;
        } else {
            row.extend_from_slice(&regressor.feature_means[i * FEATURE_LEN..(i + 1) * FEATURE_LEN]);
        }
    }
    Ok((row, valid))
}

/// `regions` is ordered nailbed, conjunctiva, tongue.
pub fn predict_hb(bundle: &ModelBundle, regions: &[FeatureVector; 3], fused: Severity) -> Result<HbPrediction, ModelError> {
    let reg = bundle.regressor(fused);
    let (row, valid) = regression_input(reg, regions)?;
    if valid == 0 {
        return Err(ModelError::NoValidRegions);
    }
    Ok(HbPrediction { raw_hb: reg.predict(&row)?, reduced_confidence: valid < 3 })
}

#[derive(Serialize, Deserialize)]
struct ClassifierEntry {
    feature_version: u32,
    sample_count: usize,
    seed: u64,
    input_len: usize,
}

#[derive(Serialize, Deserialize)]
struct RegressorEntry {
    class: Severity,
    intercept_bits: u64,
    tau_bits: u64,
    sample_count: usize,
    input_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    feature_version: u32,
    feature_layout: String,
    bundle_version: u32,
    trained_at: i64,
    held_out: Vec<String>,
    thresholds: ThresholdTable,
    classifiers: Vec<ClassifierEntry>,
    regressors: Vec<RegressorEntry>,
    blob_len: usize,
}

pub fn write_bundle<W: Write>(bundle: &ModelBundle, mut out: W) -> Result<(), ModelError> {
    bundle.validate()?;
    let mut blob: Vec<f64> = Vec::new();
    let mut classifiers = Vec::new();
    for c in &bundle.classifiers {
        blob.extend_from_slice(&c.weights);
        blob.extend_from_slice(&c.bias);
        blob.extend_from_slice(&c.means);
        blob.extend_from_slice(&c.scales);
        classifiers.push(ClassifierEntry {
            feature_version: c.feature_version,
            sample_count: c.sample_count,
            seed: c.seed,
            input_len: c.input_len(),
        });
    }
    let mut regressors = Vec::new();
    for r in &bundle.regressors {
        blob.extend_from_slice(&r.coefficients);
        blob.extend_from_slice(&r.feature_means);
        regressors.push(RegressorEntry {
            class: r.class,
            intercept_bits: r.intercept.to_bits(),
            tau_bits: r.tau.to_bits(),
            sample_count: r.sample_count,
            input_len: r.input_len(),
        });
    }
    let manifest = Manifest {
        feature_version: bundle.feature_version,
        feature_layout: layout_hash(),
        bundle_version: bundle.bundle_version,
        trained_at: bundle.trained_at,
        held_out: bundle.held_out.clone(),
        thresholds: bundle.thresholds.clone(),
        classifiers,
        regressors,
        blob_len: blob.len(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::Archive(e.to_string()))?;
    let io = |e: std::io::Error| ModelError::Archive(e.to_string());
    out.write_all(BUNDLE_MAGIC).map_err(io)?;
    out.write_all(&BUNDLE_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes).map_err(io)?;
    Ok(())
}

struct Cursor<'a> {
    blob: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.blob.len());
        let end = end.ok_or_else(|| ModelError::Archive("weight blob too short".into()))?;
        let v = self.blob[self.pos..end].to_vec();
        self.pos = end;
        Ok(v)
    }
}

fn to3<T>(v: Vec<T>) -> Result<[T; 3], ModelError> {
    v.try_into().map_err(|_| ModelError::Archive("expected three entries".into()))
}

pub fn read_bundle<R: Read>(mut input: R) -> Result<ModelBundle, ModelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| ModelError::Archive(e.to_string()))?;
    if bytes.len() < 10 || &bytes[..4] != BUNDLE_MAGIC {
        return Err(ModelError::Archive("not a model bundle".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BUNDLE_FORMAT_VERSION {
        return Err(ModelError::Archive(format!("unsupported bundle format {version}")));
    }
    let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let json = bytes.get(10..10 + mlen).ok_or_else(|| ModelError::Archive("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| ModelError::Archive(e.to_string()))?;
    if manifest.feature_version != FEATURE_VERSION {
        return Err(ModelError::VersionMismatch { got: manifest.feature_version, want: FEATURE_VERSION });
    }
    if manifest.feature_layout != layout_hash() {
        return Err(ModelError::Archive("feature layout hash differs from this build".into()));
    }
    let rest = &bytes[10 + mlen..];
    if rest.len() != manifest.blob_len * 8 {
        return Err(ModelError::Archive(format!("weight blob is {} bytes, expected {}", rest.len(), manifest.blob_len * 8)));
    }
    let blob: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut cur = Cursor { blob: &blob, pos: 0 };
    if manifest.classifiers.len() != 3 || manifest.regressors.len() != 3 {
        return Err(ModelError::Archive("bundle needs three classifiers and three regressors".into()));
    }
    let mut classifiers = Vec::new();
    for e in &manifest.classifiers {
        let d = e.input_len;
        let weights = cur.take(3 * d)?;
        let bias = cur.take(3)?;
        classifiers.push(ClassifierModel {
            weights,
            bias: [bias[0], bias[1], bias[2]],
            means: cur.take(d)?,
            scales: cur.take(d)?,
            feature_version: e.feature_version,
            sample_count: e.sample_count,
            seed: e.seed,
        });
    }
    let mut regressors = Vec::new();
    for e in &manifest.regressors {
        regressors.push(RegressorModel {
            class: e.class,
            coefficients: cur.take(e.input_len)?,
            feature_means: cur.take(e.input_len)?,
            intercept: f64::from_bits(e.intercept_bits),
            tau: f64::from_bits(e.tau_bits),
            sample_count: e.sample_count,
        });
    }
    let bundle = ModelBundle {
        classifiers: to3(classifiers)?,
        regressors: to3(regressors)?,
        thresholds: manifest.thresholds,
        feature_version: manifest.feature_version,
        bundle_version: manifest.bundle_version,
        trained_at: manifest.trained_at,
        held_out: manifest.held_out,
    };
    bundle.validate()?;
    Ok(bundle)
}
