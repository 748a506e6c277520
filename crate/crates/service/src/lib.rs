//! # hbscan-service
//!
//! Patient records, capture and lab-report ingestion, screening, personal
//! calibration and the retraining loop, persisted as an append-only event
//! log plus content-addressed image blobs. [`http::router`] exposes it as a
//! JSON API.
//!
//! Data directory layout:
//!
//! ```text
//! events.jsonl        one {"seq","type","payload"} record per line
//! blobs/<sha256>      uploaded capture bytes
//! bundles/v<N>.hbmb   every model bundle that was ever active
//! ```

mod events;
pub mod http;
mod ocr_http;
mod service;

pub use events::{Capture, Event, EventLog, EventRecord, PatientRecord, RetrainDecision, RetrainOutcome, Screening, State, StoredReport};
pub use ocr_http::HttpOcrClient;
pub use service::{
    BundleInfo, DefaultTrainer, HistoryEntry, NewPatient, ReportInput, ReportOutcome, Service, ServiceConfig, Trainer,
};

use hbscan_core::models::ModelError;
use hbscan_core::pipeline::PipelineError;
use hbscan_core::reports::{IngestError, ParseError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    Invalid { message: String, stage: &'static str },
    #[error("{0}")]
    NoCaptures(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ParseError),
    #[error(transparent)]
    Ocr(IngestError),
    #[error("storage: {0}")]
    Storage(String),
    #[error("missing or invalid API token")]
    Unauthorized,
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        ServiceError::Pipeline(e.into())
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Parse(p) => ServiceError::Report(p),
            other => ServiceError::Ocr(other),
        }
    }
}

impl ServiceError {
    pub fn invalid(message: impl Into<String>, stage: &'static str) -> Self {
        ServiceError::Invalid { message: message.into(), stage }
    }

    /// Machine-readable error code for API bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Invalid { .. } => "invalid_request",
            ServiceError::NoCaptures(_) => "no_captures",
            ServiceError::Pipeline(_) => "pipeline_error",
            ServiceError::Report(_) => "report_unparseable",
            ServiceError::Ocr(_) => "ocr_unavailable",
            ServiceError::Storage(_) => "storage_error",
            ServiceError::Unauthorized => "unauthorized",
        }
    }

    /// Stage of the pipeline (or service layer) that failed.
    pub fn stage(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) | ServiceError::Conflict(_) => "registry",
            ServiceError::Invalid { stage, .. } => stage,
            ServiceError::NoCaptures(_) => "capture",
            ServiceError::Pipeline(e) => e.stage(),
            ServiceError::Report(_) | ServiceError::Ocr(_) => "reports",
            ServiceError::Storage(_) => "storage",
            ServiceError::Unauthorized => "auth",
        }
    }
}
