//! Severity classification, majority fusion, per-class robust regression,
//! personal calibration, threshold diagnosis and model bundles.

mod bundle;
mod calibration;
mod classifier;
mod fusion;
mod regression;
mod thresholds;

pub use bundle::{predict_hb, regression_input, read_bundle, write_bundle, HbPrediction, ModelBundle, BUNDLE_FORMAT_VERSION, BUNDLE_MAGIC};
pub use calibration::{fit_calibration, CalibrationParams, GAIN_LIMITS};
pub use classifier::{classify, classify_row, softmax, train_classifier, train_classifier_traced, Classification, ClassifierConfig, ClassifierModel};
pub use fusion::{fuse_available, fuse_majority};
pub use regression::{fit_ols, huber_objective, train_regressor, train_regressor_traced, RegressorConfig, RegressorModel};
pub use thresholds::{diagnose, DemographicGroup, Demographics, Sex, ThresholdRow, ThresholdTable};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("class {0} has no training samples")]
    MissingClass(Severity),
    #[error("training data: {0}")]
    InvalidData(String),
    #[error("{class} regressor needs at least {need} samples, got {got}")]
    TooFewSamples { class: Severity, need: usize, got: usize },
    #[error("feature version {got} does not match model version {want}")]
    VersionMismatch { got: u32, want: u32 },
    #[error("vector has {got} values, model expects {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("no valid region vectors to predict from")]
    NoValidRegions,
    #[error("no threshold row for group {0}")]
    NoMatchingRow(DemographicGroup),
    #[error("threshold table: {0}")]
    InvalidTable(String),
    #[error("linear system is singular")]
    Singular,
    #[error("bundle archive: {0}")]
    Archive(String),
}

/// Anaemia severity, ordered from most to least severe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Severe,
    Mild,
    NonAnaemic,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Severe, Severity::Mild, Severity::NonAnaemic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Severe => "severe",
            Severity::Mild => "mild",
            Severity::NonAnaemic => "non_anaemic",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Severity::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| ModelError::InvalidData(format!("unknown class '{s}'")))
    }
}
