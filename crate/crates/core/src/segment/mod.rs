//! ROI localisation: SLIC superpixels with colour-profile cluster selection,
//! plus a forward-only depthwise-separable encoder–decoder backend.

mod net;
mod pnet;
mod roi;
mod slic;

pub use net::{
    depthwise_conv2d, dwsep_conv2d, pointwise_conv2d, DepthwiseKernel, Layer, LayerSpec, NetOutput, NetSpec,
    PointwiseKernel, Tensor3,
};
pub use pnet::{read_pnet, write_pnet, PNET_MAGIC, PNET_VERSION};
pub use roi::{cluster_mean_lab, select_roi, ColorProfile, RoiSelection};
pub use slic::{boundary_recall, slic, slic_traced, LabelMap};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("k = {k} superpixels requested for {pixels} pixels")]
    TooManySuperpixels { k: usize, pixels: usize },
    #[error("invalid SLIC parameters: {0}")]
    InvalidParams(String),
    #[error("raster dimensions disagree: {0}")]
    DimensionMismatch(String),
    #[error("invalid colour profile: {0}")]
    InvalidProfile(String),
    #[error("convolution: {0}")]
    Convolution(String),
    #[error("shape chain broken at layer {layer}: {reason}")]
    ShapeChain { layer: usize, reason: String },
    #[error("input shape {got:?} does not match network input {want:?}")]
    InputShape { got: (usize, usize, usize), want: (usize, usize, usize) },
    #[error("network has no bottleneck layer flagged")]
    NoBottleneck,
    #[error("network file: {0}")]
    Format(String),
}
