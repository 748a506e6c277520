//! Event types, the replayable query state and the on-disk log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hbscan_core::dataset::LabelledSample;
use hbscan_core::features::Region;
use hbscan_core::models::{CalibrationParams, Demographics, Severity, Sex};
use hbscan_core::pipeline::RegionReport;
use hbscan_core::reports::LabReport;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub age_years: f64,
    pub sex: Sex,
    #[serde(default)]
    pub pregnant: bool,
    #[serde(default)]
    pub altitude_m: f64,
    /// Unix seconds.
    pub created_at: i64,
}

impl PatientRecord {
    pub fn demographics(&self) -> Demographics {
        Demographics { age_years: self.age_years, sex: self.sex, pregnant: self.pregnant }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub id: String,
    pub patient_id: String,
    pub region: Region,
    /// SHA-256 of the uploaded bytes, hex encoded.
    pub blob: String,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub id: String,
    pub patient_id: String,
    pub report: LabReport,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub id: String,
    pub patient_id: String,
    pub timestamp: i64,
    pub regions: Vec<RegionReport>,
    /// Capture used for each region (nailbed, conjunctiva, tongue).
    pub captures: [Option<String>; 3],
    pub fused_class: Severity,
    pub raw_hb: f64,
    pub calibrated_hb: f64,
    pub severity: Severity,
    pub reduced_confidence: bool,
    pub calibration: CalibrationParams,
    pub bundle_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainOutcome {
    NoOp,
    Rejected,
    Failed,
    Accepted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainDecision {
    pub outcome: RetrainOutcome,
    pub detail: String,
    pub new_samples: usize,
    pub baseline_spearman: Option<f64>,
    pub candidate_spearman: Option<f64>,
    pub candidate_version: Option<u32>,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    PatientCreated(PatientRecord),
    CaptureStored(Capture),
    ReportStored(StoredReport),
    ScreeningRecorded(Screening),
    CalibrationUpdated { patient_id: String, params: CalibrationParams, timestamp: i64 },
    SampleQueued { report_id: String, screening_id: String, sample: LabelledSample },
    RetrainDecided(RetrainDecision),
    BundleActivated { version: u32, timestamp: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Everything the query endpoints can see, rebuilt purely from events.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct State {
    pub last_seq: u64,
    pub patients: BTreeMap<String, PatientRecord>,
    pub captures: BTreeMap<String, Vec<Capture>>,
    pub reports: BTreeMap<String, Vec<StoredReport>>,
    pub screenings: BTreeMap<String, Vec<Screening>>,
    pub calibration: BTreeMap<String, CalibrationParams>,
    pub queue: Vec<LabelledSample>,
    /// Queue length already consumed by an accepted retrain.
    pub queue_consumed: usize,
    pub bundle_versions: Vec<u32>,
    pub active_bundle: Option<u32>,
    pub retrains: Vec<RetrainDecision>,
}

impl State {
    pub fn apply(&mut self, rec: &EventRecord) {
        self.last_seq = rec.seq;
        match &rec.event {
            Event::PatientCreated(p) => {
                self.patients.insert(p.id.clone(), p.clone());
            }
            Event::CaptureStored(c) => self.captures.entry(c.patient_id.clone()).or_default().push(c.clone()),
            Event::ReportStored(r) => self.reports.entry(r.patient_id.clone()).or_default().push(r.clone()),
            Event::ScreeningRecorded(s) => self.screenings.entry(s.patient_id.clone()).or_default().push(s.clone()),
            Event::CalibrationUpdated { patient_id, params, .. } => {
                self.calibration.insert(patient_id.clone(), *params);
            }
            Event::SampleQueued { sample, .. } => self.queue.push(sample.clone()),
            Event::RetrainDecided(d) => {
                if d.outcome == RetrainOutcome::Accepted {
                    self.queue_consumed = self.queue.len();
                }
                self.retrains.push(d.clone());
            }
            Event::BundleActivated { version, .. } => {
                if !self.bundle_versions.contains(version) {
                    self.bundle_versions.push(*version);
                }
                self.active_bundle = Some(*version);
            }
        }
    }

    pub fn calibration_for(&self, patient_id: &str) -> CalibrationParams {
        self.calibration.get(patient_id).copied().unwrap_or_default()
    }

    pub fn new_samples(&self) -> usize {
        self.queue.len() - self.queue_consumed
    }
}

/// Append-only JSON-lines log. One writer at a time; every append is
/// flushed and synced before it is acknowledged.
pub struct EventLog {
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Opens (or creates) the log and replays it into a fresh state.
    pub fn open(path: &Path) -> Result<(Self, State), ServiceError> {
        let mut state = State::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: EventRecord = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Storage(format!("event log line {}: {e}", i + 1)))?;
                if rec.seq <= state.last_seq {
                    return Err(ServiceError::Storage(format!(
                        "event log line {}: sequence {} after {}",
                        i + 1,
                        rec.seq,
                        state.last_seq
                    )));
                }
                state.apply(&rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((Self { file, next_seq: state.last_seq + 1 }, state))
    }

    pub fn append(&mut self, event: Event) -> Result<EventRecord, ServiceError> {
        let rec = EventRecord { seq: self.next_seq, event };
        let mut line = serde_json::to_vec(&rec).map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_as_json_lines() {
        let rec = EventRecord { seq: 4, event: Event::BundleActivated { version: 2, timestamp: 10 } };
        let s = serde_json::to_string(&rec).unwrap();
        assert_eq!(s, r#"{"seq":4,"type":"bundle_activated","payload":{"version":2,"timestamp":10}}"#);
        assert_eq!(serde_json::from_str::<EventRecord>(&s).unwrap(), rec);
    }

    #[test]
    fn replay_rejects_out_of_order_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":2,\"type\":\"bundle_activated\",\"payload\":{\"version\":1,\"timestamp\":0}}\n{\"seq\":2,\"type\":\"bundle_activated\",\"payload\":{\"version\":1,\"timestamp\":0}}\n",
        )
        .unwrap();
        assert!(EventLog::open(&path).is_err());
    }
}
