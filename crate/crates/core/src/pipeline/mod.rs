//! End-to-end composition of the stages and the single configuration file
//! that holds every tunable constant.

mod metrics;
mod region;
mod screen;
mod train;

pub use metrics::{confusion_matrix, evaluate_bundle, mean_absolute_error, metrics_from_predictions, spearman, EvalMetrics, PredictionRow};
pub use region::{analyse_region, preprocess_image, segment_image, Preprocessed, RegionAnalysis, Segmented};
pub use screen::{finalize, screen, screen_features, RegionReport, ScreeningResult};
pub use train::{extract_corpus, extract_patient, load_net, split_patient_ids, train_bundle, train_from_corpus, CorpusPatient};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{parse_plan, Balancer, DatasetError};
use crate::features::{FeatureError, Region};
use crate::imaging::ImagingError;
use crate::models::{ClassifierConfig, ModelError, RegressorConfig, ThresholdTable};
use crate::preprocess::{ClaheConfig, PreprocessError, StructuringElement, DEFAULT_TARGET_WHITE};
use crate::segment::{ColorProfile, SegmentError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Pipeline stage the error belongs to, as reported to API clients.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Imaging(_) | PipelineError::Io(_) => "imaging",
            PipelineError::Preprocess(_) => "preprocess",
            PipelineError::Segment(_) => "segment",
            PipelineError::Feature(_) => "features",
            PipelineError::Model(_) => "models",
            PipelineError::Dataset(_) => "dataset",
        }
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlareConfig {
    pub enabled: bool,
    /// Odd box-mean window for the local threshold.
    pub window: usize,
    /// A pixel is glare when its luma exceeds the local mean by this much.
    pub offset: f32,
}

impl Default for GlareConfig {
    fn default() -> Self {
        Self { enabled: true, window: 15, offset: 40.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    pub k: usize,
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self { k: 64, compactness: 10.0, iters: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfConfig {
    pub weight: f64,
    pub iters: usize,
    /// Lab distance scale of the per-pixel colour likelihood.
    pub softness: f64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self { weight: 0.3, iters: 5, softness: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    pub element: StructuringElement,
    pub open: bool,
    pub close: bool,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self { element: StructuringElement::Cross3, open: true, close: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlluminationConfig {
    pub enabled: bool,
    pub target_white: f64,
    pub sclera: ColorProfile,
}

impl Default for IlluminationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target_white: DEFAULT_TARGET_WHITE,
            sclera: ColorProfile { target: [90.0, 0.0, 3.0], max_distance: 20.0, min_area_fraction: 0.02 },
        }
    }
}

/// Expected ROI colours. The defaults sit at the middle of the synthetic
/// corpus range and need recalibrating on real photographs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionProfiles {
    pub nailbed: ColorProfile,
    pub conjunctiva: ColorProfile,
    pub tongue: ColorProfile,
}

impl Default for RegionProfiles {
    fn default() -> Self {
        let p = |target| ColorProfile { target, max_distance: 21.0, min_area_fraction: 0.03 };
        Self { nailbed: p([64.0, 37.5, 6.0]), conjunctiva: p([66.0, 39.5, 4.0]), tongue: p([60.0, 41.5, 8.0]) }
    }
}

impl RegionProfiles {
    pub fn get(&self, region: Region) -> &ColorProfile {
        match region {
            Region::Nailbed => &self.nailbed,
            Region::Conjunctiva => &self.conjunctiva,
            Region::Tongue => &self.tongue,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Slic,
    Net,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub backend: BackendKind,
    /// PNET weights file, required by the `net` backend.
    pub net_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub clahe: ClaheConfig,
    pub glare: GlareConfig,
    pub slic: SlicConfig,
    pub crf: CrfConfig,
    pub morph: MorphConfig,
    pub illumination: IlluminationConfig,
    pub profiles: RegionProfiles,
    pub segmentation: SegmentationConfig,
    pub classifier: ClassifierConfig,
    pub regressor: RegressorConfig,
    pub balance: Balancer,
    /// Fraction of patients held out by `train`.
    pub test_fraction: f64,
    /// Geometric augmentation applied to training images, e.g. `["flip_h"]`.
    pub augment: Vec<String>,
    /// TOML threshold table; the built-in defaults apply when unset.
    pub threshold_table: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            clahe: ClaheConfig { tiles_x: 4, tiles_y: 4, clip_limit: 2.0 },
            glare: GlareConfig::default(),
            slic: SlicConfig::default(),
            crf: CrfConfig::default(),
            morph: MorphConfig::default(),
            illumination: IlluminationConfig::default(),
            profiles: RegionProfiles::default(),
            segmentation: SegmentationConfig::default(),
            classifier: ClassifierConfig::default(),
            regressor: RegressorConfig { ridge: 2.0, ..RegressorConfig::default() },
            balance: Balancer::default(),
            test_fraction: 0.2,
            augment: Vec::new(),
            threshold_table: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), PipelineError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be a positive number, got {v}")))
    }
}

impl PipelineConfig {
    /// Parses and validates a TOML config; relative paths inside it resolve
    /// against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if let Some(base) = base_dir {
            for p in [&mut cfg.threshold_table, &mut cfg.segmentation.net_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.clahe.validate().map_err(|e| config_err(e.to_string()))?;
        let g = &self.glare;
        if g.window < 3 || g.window % 2 == 0 {
            return Err(config_err(format!("glare.window must be odd and >= 3, got {}", g.window)));
        }
        if !g.offset.is_finite() {
            return Err(config_err("glare.offset must be finite"));
        }
        if self.slic.k == 0 {
            return Err(config_err("slic.k must be at least 1"));
        }
        positive("slic.compactness", self.slic.compactness)?;
        if self.slic.iters > 100 {
            return Err(config_err("slic.iters must be at most 100"));
        }
        if !(self.crf.weight >= 0.0 && self.crf.weight.is_finite()) {
            return Err(config_err("crf.weight must be >= 0"));
        }
        positive("crf.softness", self.crf.softness)?;
        positive("illumination.target_white", self.illumination.target_white)?;
        if self.illumination.target_white > 255.0 {
            return Err(config_err("illumination.target_white must be <= 255"));
        }
        self.illumination.sclera.validate()?;
        for r in Region::ALL {
            self.profiles.get(r).validate()?;
        }
        if self.segmentation.backend == BackendKind::Net && self.segmentation.net_path.is_none() {
            return Err(config_err("segmentation.backend = \"net\" needs segmentation.net_path"));
        }
        let c = &self.classifier;
        if !(c.l2 >= 0.0 && c.l2.is_finite()) {
            return Err(config_err("classifier.l2 must be >= 0"));
        }
        positive("classifier.lr", c.lr)?;
        if c.epochs == 0 {
            return Err(config_err("classifier.epochs must be at least 1"));
        }
        let r = &self.regressor;
        if !(r.ridge >= 0.0 && r.ridge.is_finite()) {
            return Err(config_err("regressor.ridge must be >= 0"));
        }
        positive("regressor.tol", r.tol)?;
        if r.max_iters == 0 {
            return Err(config_err("regressor.max_iters must be at least 1"));
        }
        match self.balance {
            Balancer::Smote { k } if k == 0 => return Err(config_err("balance.k must be at least 1")),
            Balancer::Rose { h } if !(h >= 0.0 && h.is_finite()) => return Err(config_err("balance.h must be >= 0")),
            _ => {}
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return Err(config_err(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if !self.augment.is_empty() {
            parse_plan(&self.augment)?;
        }
        Ok(())
    }

    pub fn threshold_table(&self) -> Result<ThresholdTable, PipelineError> {
        match &self.threshold_table {
            None => Ok(ThresholdTable::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                Ok(ThresholdTable::from_toml(&text)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), None).unwrap(), cfg);
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[slic]\nk = 100\n", None).unwrap();
        assert_eq!((cfg.seed, cfg.slic.k, cfg.slic.iters), (3, 100, 10));
    }

    #[test]
    fn unknown_keys_and_bad_ranges_rejected() {
        for bad in [
            "sed = 3",
            "[slic]\nkk = 3",
            "[clahe]\ntiles_x = 0\ntiles_y = 2\nclip_limit = 2.0",
            "[glare]\nwindow = 4",
            "[crf]\nweight = -1.0",
            "test_fraction = 1.5",
            "augment = [\"blur\"]",
            "[profiles.tongue]\ntarget = [50.0, 1.0, 2.0]\nmax_distance = 0.0\nmin_area_fraction = 0.1",
            "[segmentation]\nbackend = \"net\"",
        ] {
            assert!(matches!(PipelineConfig::from_toml(bad, None), Err(PipelineError::Config(_)) | Err(PipelineError::Preprocess(_)) | Err(PipelineError::Segment(_)) | Err(PipelineError::Dataset(_))), "{bad}");
        }
    }
}
