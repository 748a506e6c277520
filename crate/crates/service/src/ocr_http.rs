use std::time::Duration;

use hbscan_core::reports::{OcrClient, TransportError};

/// OCR over HTTP: POSTs the image bytes to the endpoint and reads the
/// response body as plain text, or as `{"text": ...}` when it is JSON.
#[derive(Debug, Clone)]
pub struct HttpOcrClient {
    endpoint: String,
}

impl HttpOcrClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into() }
    }
}

impl OcrClient for HttpOcrClient {
    fn submit(&self, image: &[u8], timeout: Duration) -> Result<String, TransportError> {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        let mut resp = agent
            .post(&self.endpoint)
            .header("Content-Type", "application/octet-stream")
            .send(image)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout(timeout),
                other => TransportError::Failed(other.to_string()),
            })?;
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError::Failed(e.to_string()))?;
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&body) {
            if let Some(t) = v.get("text").and_then(|t| t.as_str()) {
                return Ok(t.to_string());
            }
        }
        Ok(body)
    }
}
