use std::env;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_report_text, LabReport, ParseError, ReportSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("OCR request timed out after {0:?}")]
    Timeout(Duration),
    #[error("OCR request failed: {0}")]
    Failed(String),
    #[error("OCR gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: Box<TransportError> },
    #[error("OCR client is not configured")]
    NotConfigured,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Turns a report photograph into text. One call is one attempt; retries
/// are handled by [`ingest_report_image`].
pub trait OcrClient: Send + Sync {
    fn submit(&self, image: &[u8], timeout: Duration) -> Result<String, TransportError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrConfig {
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: usize,
}

impl Default for OcrConfig {
    fn default() -> Self {
        Self { endpoint: None, timeout_secs: 10.0, retries: 2 }
    }
}

impl OcrConfig {
    /// Applies `HBSCAN_OCR_URL`, `HBSCAN_OCR_TIMEOUT_SECS` and
    /// `HBSCAN_OCR_RETRIES` on top of `self`.
    pub fn with_env(mut self) -> Result<Self, String> {
        if let Ok(url) = env::var("HBSCAN_OCR_URL") {
            self.endpoint = (!url.is_empty()).then_some(url);
        }
        if let Ok(t) = env::var("HBSCAN_OCR_TIMEOUT_SECS") {
            self.timeout_secs = t.parse().map_err(|_| format!("HBSCAN_OCR_TIMEOUT_SECS: bad number '{t}'"))?;
        }
        if let Ok(r) = env::var("HBSCAN_OCR_RETRIES") {
            self.retries = r.parse().map_err(|_| format!("HBSCAN_OCR_RETRIES: bad count '{r}'"))?;
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err("OCR timeout must be positive".into());
        }
        Ok(self)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug)]
enum StubMode {
    Text(String),
    Timeout,
    Fail(String),
}

/// Deterministic client for tests and offline deployments.
#[derive(Debug)]
pub struct StubOcrClient {
    mode: StubMode,
    calls: AtomicUsize,
}

impl StubOcrClient {
    pub fn text(text: impl Into<String>) -> Self {
        Self { mode: StubMode::Text(text.into()), calls: AtomicUsize::new(0) }
    }

    pub fn timing_out() -> Self {
        Self { mode: StubMode::Timeout, calls: AtomicUsize::new(0) }
    }

    pub fn failing(msg: impl Into<String>) -> Self {
        Self { mode: StubMode::Fail(msg.into()), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl OcrClient for StubOcrClient {
    fn submit(&self, _image: &[u8], timeout: Duration) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.mode {
            StubMode::Text(t) => Ok(t.clone()),
            StubMode::Timeout => Err(TransportError::Timeout(timeout)),
            StubMode::Fail(m) => Err(TransportError::Failed(m.clone())),
        }
    }
}

pub fn ingest_report_image(image: &[u8], client: &dyn OcrClient, cfg: &OcrConfig) -> Result<LabReport, IngestError> {
    let attempts = cfg.retries + 1;
    let mut last = TransportError::NotConfigured;
    for _ in 0..attempts {
        match client.submit(image, cfg.timeout()) {
            Ok(text) => {
                let mut r = parse_report_text(&text)?;
                r.source = ReportSource::Ocr;
                return Ok(r);
            }
            Err(e) => last = e,
        }
    }
    Err(TransportError::Exhausted { attempts, last: Box::new(last) }.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_passthrough() {
        let r = ingest_report_image(b"img", &StubOcrClient::text("Hb 9.0 g/dL"), &OcrConfig::default()).unwrap();
        assert_eq!((r.hb, r.source), (9.0, ReportSource::Ocr));
    }

    #[test]
    fn timeouts_retry_then_surface_as_transport() {
        let stub = StubOcrClient::timing_out();
        let cfg = OcrConfig { retries: 3, ..Default::default() };
        let err = ingest_report_image(b"img", &stub, &cfg).unwrap_err();
        assert!(matches!(err, IngestError::Transport(TransportError::Exhausted { attempts: 4, .. })));
        assert_eq!(stub.calls(), 4);
    }

    #[test]
    fn gibberish_is_a_parse_error() {
        let err = ingest_report_image(b"img", &StubOcrClient::text("lorem ipsum"), &OcrConfig::default()).unwrap_err();
        assert_eq!(err, IngestError::Parse(ParseError::Unparseable));
    }
}
