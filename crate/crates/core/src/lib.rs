//! # hbscan-core
//!
//! Non-invasive haemoglobin estimation from photographs of fingernail beds,
//! palpebral conjunctiva and tongue.
//!
//! The crate is organised as a pipeline of stages, each usable on its own:
//!
//! - [`imaging`]: rasters, colour spaces (RGB, CIELab, YCbCr, HSV), flips,
//!   rotations and affine warps
//! - [`preprocess`]: CLAHE, adaptive thresholding, morphology, sclera-based
//!   illumination correction and CRF mask refinement
//! - [`segment`]: SLIC superpixels with colour-profile ROI selection and a
//!   forward-only depthwise-separable encoder–decoder
//! - [`features`]: per-region colour statistics and a bottleneck regression head
//! - [`dataset`]: augmentation, SMOTE/ROSE balancing, splits and a synthetic corpus
//! - [`models`]: classifier, majority fusion, robust per-class regression,
//!   calibration, diagnosis thresholds and model bundles
//! - [`reports`]: lab report parsing and the OCR client seam
//! - [`pipeline`]: the end-to-end screening composition and its configuration
//!
//! Heavy inner loops run on rayon when the `parallel` feature is enabled
//! (the default); results are bit-identical without it.

pub mod dataset;
pub mod features;
pub mod imaging;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod reports;
pub mod segment;

pub use imaging::{ColorSpaceId, ImageRgb8, PlaneF32};
pub use preprocess::RegionMask;
