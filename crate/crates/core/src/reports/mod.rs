//! Lab report ingestion: a text parser for Hb, HCT and MCV and the OCR seam
//! that turns report photographs into text.

mod ocr;

pub use ocr::{ingest_report_image, IngestError, OcrClient, OcrConfig, StubOcrClient, TransportError};

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HB_RANGE: (f64, f64) = (0.0, 25.0);
pub const HCT_RANGE: (f64, f64) = (0.0, 100.0);
pub const MCV_RANGE: (f64, f64) = (30.0, 150.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Typed,
    ParsedText,
    Ocr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabReport {
    /// g/dL.
    pub hb: f64,
    /// Percent.
    pub hct: Option<f64>,
    /// fL.
    pub mcv: Option<f64>,
    /// Unix seconds; unset until the caller stamps it.
    pub timestamp: Option<i64>,
    pub source: ReportSource,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no haemoglobin value found in report text")]
    Unparseable,
    #[error("{field} value {value} is outside ({lo}, {hi}]")]
    Range { field: &'static str, value: f64, lo: f64, hi: f64 },
}

fn check(field: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<f64, ParseError> {
    if value > lo && value <= hi {
        Ok(value)
    } else {
        Err(ParseError::Range { field, value, lo, hi })
    }
}

impl LabReport {
    /// A manually entered report, range-checked like parsed ones.
    pub fn typed(hb: f64, hct: Option<f64>, mcv: Option<f64>) -> Result<Self, ParseError> {
        Ok(Self {
            hb: check("hb", hb, HB_RANGE)?,
            hct: hct.map(|v| check("hct", v, HCT_RANGE)).transpose()?,
            mcv: mcv.map(|v| check("mcv", v, MCV_RANGE)).transpose()?,
            timestamp: None,
            source: ReportSource::Typed,
        })
    }
}

struct Patterns {
    hb: Regex,
    hct: Regex,
    mcv: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        hb: Regex::new(r"(?i)\b(?:haemoglobin|hemoglobin|hgb|hb)\b\s*(?:\([^)]*\))?\s*[:=\-]?\s*(\d+(?:\.\d+)?)\s*(g/dl|g/l|g%|gm/dl)?").unwrap(),
        hct: Regex::new(r"(?i)\b(?:hct|haematocrit|hematocrit|pcv)\b\s*[:=\-]?\s*(\d+(?:\.\d+)?)").unwrap(),
        mcv: Regex::new(r"(?i)\bmcv\b\s*[:=\-]?\s*(\d+(?:\.\d+)?)").unwrap(),
    })
}

/// Finds the first Hb token followed by a number. Values in g/L (explicit
/// unit, or any bare value above 25) are converted to g/dL.
pub fn parse_report_text(text: &str) -> Result<LabReport, ParseError> {
    let p = patterns();
    let caps = p.hb.captures(text).ok_or(ParseError::Unparseable)?;
    let raw: f64 = caps[1].parse().map_err(|_| ParseError::Unparseable)?;
    let per_litre = caps.get(2).is_some_and(|u| u.as_str().eq_ignore_ascii_case("g/l"));
    let hb = if per_litre || raw > HB_RANGE.1 { raw / 10.0 } else { raw };
    let number = |re: &Regex| re.captures(text).and_then(|c| c[1].parse::<f64>().ok());
    Ok(LabReport {
        hb: check("hb", hb, HB_RANGE)?,
        hct: number(&p.hct).map(|v| check("hct", v, HCT_RANGE)).transpose()?,
        mcv: number(&p.mcv).map(|v| check("mcv", v, MCV_RANGE)).transpose()?,
        timestamp: None,
        source: ReportSource::ParsedText,
    })
}
