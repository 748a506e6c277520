use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use hbscan_core::dataset::{read_labels, split_by_patient, LabelledSample, TrainingFold};
use hbscan_core::features::{FeatureVector, Metadata, Region};
use hbscan_core::imaging::{decode_image, ImageRgb8};
use hbscan_core::models::{
    diagnose, fit_calibration, read_bundle, write_bundle, CalibrationParams, Demographics, ModelBundle, Sex,
    ThresholdTable,
};
use hbscan_core::pipeline::{
    evaluate_bundle, extract_corpus, finalize, load_net, metrics_from_predictions, screen, train_bundle, PipelineConfig,
    PipelineError,
};
use hbscan_core::reports::{ingest_report_image, parse_report_text, LabReport, OcrClient, OcrConfig, TransportError};
use hbscan_core::segment::NetSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::events::{
    Capture, Event, EventLog, PatientRecord, RetrainDecision, RetrainOutcome, Screening, State, StoredReport,
};
use crate::ServiceError;

const BASE_PREFIX: &str = "base:";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub pipeline: PipelineConfig,
    /// Overrides the active bundle's threshold table when set.
    pub thresholds: Option<ThresholdTable>,
    /// Corpus directory mixed into every retrain.
    pub base_corpus: Option<PathBuf>,
    pub ocr: OcrConfig,
    /// Reports pair with screenings at most this far apart (seconds).
    pub pairing_window_secs: i64,
    /// Largest held-out Spearman drop a retrained bundle may show.
    pub max_spearman_drop: f64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            pipeline: PipelineConfig::default(),
            thresholds: None,
            base_corpus: None,
            ocr: OcrConfig::default(),
            pairing_window_secs: 24 * 3600,
            max_spearman_drop: 0.02,
        }
    }
}

/// Produces a candidate bundle during retraining.
pub trait Trainer: Send + Sync {
    fn train(
        &self,
        fold: &TrainingFold,
        cfg: &PipelineConfig,
        thresholds: &ThresholdTable,
        version: u32,
        trained_at: i64,
        held_out: Vec<String>,
    ) -> Result<ModelBundle, PipelineError>;
}

pub struct DefaultTrainer;

impl Trainer for DefaultTrainer {
    fn train(
        &self,
        fold: &TrainingFold,
        cfg: &PipelineConfig,
        thresholds: &ThresholdTable,
        version: u32,
        trained_at: i64,
        held_out: Vec<String>,
    ) -> Result<ModelBundle, PipelineError> {
        train_bundle(fold, cfg, thresholds, version, trained_at, held_out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewPatient {
    pub id: Option<String>,
    pub age_years: f64,
    pub sex: Sex,
    #[serde(default)]
    pub pregnant: bool,
    #[serde(default)]
    pub altitude_m: f64,
    pub created_at: Option<i64>,
}

/// A lab report as submitted: typed values or free text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportInput {
    pub hb: Option<f64>,
    pub hct: Option<f64>,
    pub mcv: Option<f64>,
    pub text: Option<String>,
    pub timestamp: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub report: StoredReport,
    pub paired_screening: Option<String>,
    pub calibration: CalibrationParams,
    pub queued: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    Screening(Screening),
    Report(StoredReport),
}

impl HistoryEntry {
    pub fn timestamp(&self) -> i64 {
        match self {
            HistoryEntry::Screening(s) => s.timestamp,
            HistoryEntry::Report(r) => r.timestamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub version: u32,
    pub active: bool,
    pub feature_version: u32,
    pub trained_at: i64,
    pub held_out_patients: usize,
    pub thresholds: ThresholdTable,
    pub versions: Vec<u32>,
}

type BaseSamples = Result<(Vec<LabelledSample>, BTreeMap<String, Demographics>), String>;

pub struct Service {
    cfg: ServiceConfig,
    writer: Mutex<EventLog>,
    state: RwLock<Arc<State>>,
    bundles: RwLock<BTreeMap<u32, Arc<ModelBundle>>>,
    net: Option<NetSpec>,
    ocr: Option<Box<dyn OcrClient>>,
    trainer: Box<dyn Trainer>,
    retraining: Mutex<()>,
    base: OnceLock<BaseSamples>,
}

fn now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

fn bundle_path(dir: &Path, version: u32) -> PathBuf {
    dir.join("bundles").join(format!("v{version}.hbmb"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::File::open(&tmp)?.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Service {
    /// Opens the data directory and replays its log. `initial` becomes the
    /// active bundle when the log has none yet.
    pub fn open(
        cfg: ServiceConfig,
        initial: Option<ModelBundle>,
        trainer: Box<dyn Trainer>,
        ocr: Option<Box<dyn OcrClient>>,
    ) -> Result<Self, ServiceError> {
        fs::create_dir_all(cfg.data_dir.join("blobs"))?;
        fs::create_dir_all(cfg.data_dir.join("bundles"))?;
        let (mut log, mut state) = EventLog::open(&cfg.data_dir.join("events.jsonl"))?;
        let mut bundles = BTreeMap::new();
        for &v in &state.bundle_versions {
            let bytes = fs::read(bundle_path(&cfg.data_dir, v))?;
            let b = read_bundle(&bytes[..]).map_err(|e| ServiceError::Storage(format!("bundle v{v}: {e}")))?;
            bundles.insert(v, Arc::new(b));
        }
        if state.active_bundle.is_none() {
            let b = initial.ok_or_else(|| ServiceError::invalid("no model bundle: pass one to start a fresh data directory", "config"))?;
            let mut bytes = Vec::new();
            write_bundle(&b, &mut bytes)?;
            write_atomic(&bundle_path(&cfg.data_dir, b.bundle_version), &bytes)?;
            let rec = log.append(Event::BundleActivated { version: b.bundle_version, timestamp: b.trained_at })?;
            state.apply(&rec);
            bundles.insert(b.bundle_version, Arc::new(b));
        }
        let net = load_net(&cfg.pipeline)?;
        Ok(Self {
            cfg,
            writer: Mutex::new(log),
            state: RwLock::new(Arc::new(state)),
            bundles: RwLock::new(bundles),
            net,
            ocr,
            trainer,
            retraining: Mutex::new(()),
            base: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    /// Immutable snapshot of the query state.
    pub fn snapshot(&self) -> Arc<State> {
        self.state.read().expect("state lock").clone()
    }

    fn active_bundle(&self) -> Result<Arc<ModelBundle>, ServiceError> {
        let v = self.snapshot().active_bundle.ok_or_else(|| ServiceError::Storage("no active bundle".into()))?;
        self.bundles.read().expect("bundle lock").get(&v).cloned().ok_or_else(|| ServiceError::Storage(format!("bundle v{v} not loaded")))
    }

    fn thresholds(&self, bundle: &ModelBundle) -> ThresholdTable {
        self.cfg.thresholds.clone().unwrap_or_else(|| bundle.thresholds.clone())
    }

    /// Appends events under the writer lock and publishes the new state.
    /// `build` sees the state as of the lock and the sequence number the
    /// first event will get.
    fn commit<T>(&self, build: impl FnOnce(&State, u64) -> Result<(Vec<Event>, T), ServiceError>) -> Result<T, ServiceError> {
        let mut log = self.writer.lock().expect("writer lock");
        let current = self.snapshot();
        let (events, out) = build(&current, current.last_seq + 1)?;
        if events.is_empty() {
            return Ok(out);
        }
        let mut next = (*current).clone();
        for e in events {
            let rec = log.append(e)?;
            next.apply(&rec);
        }
        *self.state.write().expect("state lock") = Arc::new(next);
        Ok(out)
    }

    fn patient<'a>(state: &'a State, id: &str) -> Result<&'a PatientRecord, ServiceError> {
        state.patients.get(id).ok_or_else(|| ServiceError::NotFound(format!("unknown patient '{id}'")))
    }

    pub fn create_patient(&self, p: NewPatient) -> Result<PatientRecord, ServiceError> {
        if !(p.age_years >= 0.0 && p.age_years.is_finite() && p.age_years < 150.0) {
            return Err(ServiceError::invalid(format!("age_years {} out of range", p.age_years), "registry"));
        }
        if p.pregnant && p.sex != Sex::Female {
            return Err(ServiceError::invalid("pregnant requires sex = female", "registry"));
        }
        if !p.altitude_m.is_finite() {
            return Err(ServiceError::invalid("altitude_m must be finite", "registry"));
        }
        if let Some(id) = &p.id {
            if id.is_empty() || id.len() > 64 || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(ServiceError::invalid("patient id must be 1-64 characters of [A-Za-z0-9_-]", "registry"));
            }
        }
        self.commit(|state, seq| {
            let id = p.id.clone().unwrap_or_else(|| format!("p{seq}"));
            if state.patients.contains_key(&id) {
                return Err(ServiceError::Conflict(format!("patient '{id}' already exists")));
            }
            let rec = PatientRecord {
                id,
                age_years: p.age_years,
                sex: p.sex,
                pregnant: p.pregnant,
                altitude_m: p.altitude_m,
                created_at: p.created_at.unwrap_or_else(now),
            };
            Ok((vec![Event::PatientCreated(rec.clone())], rec))
        })
    }

    pub fn get_patient(&self, id: &str) -> Result<PatientRecord, ServiceError> {
        Self::patient(&self.snapshot(), id).cloned()
    }

    pub fn list_patients(&self) -> Vec<PatientRecord> {
        self.snapshot().patients.values().cloned().collect()
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.cfg.data_dir.join("blobs").join(hash)
    }

    pub fn ingest_capture(&self, patient_id: &str, region: Region, bytes: &[u8], timestamp: Option<i64>) -> Result<Capture, ServiceError> {
        Self::patient(&self.snapshot(), patient_id)?;
        decode_image(bytes).map_err(|e| ServiceError::invalid(format!("capture image: {e}"), "imaging"))?;
        let hash = hex::encode(Sha256::digest(bytes));
        let path = self.blob_path(&hash);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        self.commit(|state, seq| {
            Self::patient(state, patient_id)?;
            let c = Capture {
                id: format!("c{seq}"),
                patient_id: patient_id.to_string(),
                region,
                blob: hash.clone(),
                timestamp: timestamp.unwrap_or_else(now),
            };
            Ok((vec![Event::CaptureStored(c.clone())], c))
        })
    }

    pub fn capture_bytes(&self, capture: &Capture) -> Result<Vec<u8>, ServiceError> {
        Ok(fs::read(self.blob_path(&capture.blob))?)
    }

    /// Latest capture per region.
    fn latest_captures(state: &State, patient_id: &str) -> [Option<Capture>; 3] {
        let mut out: [Option<Capture>; 3] = [None, None, None];
        for c in state.captures.get(patient_id).into_iter().flatten() {
            let slot = &mut out[c.region.index()];
            if slot.as_ref().is_none_or(|s| c.timestamp >= s.timestamp) {
                *slot = Some(c.clone());
            }
        }
        out
    }

    pub fn run_screening(&self, patient_id: &str, timestamp: Option<i64>) -> Result<Screening, ServiceError> {
        let state = self.snapshot();
        let patient = Self::patient(&state, patient_id)?.clone();
        let captures = Self::latest_captures(&state, patient_id);
        if captures.iter().all(|c| c.is_none()) {
            return Err(ServiceError::NoCaptures(format!("patient '{patient_id}' has no captures")));
        }
        let mut images: [Option<ImageRgb8>; 3] = [None, None, None];
        for (slot, c) in images.iter_mut().zip(&captures) {
            if let Some(c) = c {
                let bytes = self.capture_bytes(c)?;
                *slot = Some(decode_image(&bytes).map_err(PipelineError::from)?);
            }
        }
        let bundle = self.active_bundle()?;
        let meta = Metadata { altitude_m: patient.altitude_m, age_years: patient.age_years };
        let result = screen(&images, meta, &bundle, &self.cfg.pipeline, self.net.as_ref())?;
        let thresholds = self.thresholds(&bundle);
        self.commit(|state, seq| {
            let calibration = state.calibration_for(patient_id);
            let (calibrated_hb, severity) = finalize(result.raw_hb, &calibration, &patient.demographics(), &thresholds)?;
            let s = Screening {
                id: format!("s{seq}"),
                patient_id: patient_id.to_string(),
                timestamp: timestamp.unwrap_or_else(now),
                regions: result.regions.clone(),
                captures: captures.map(|c| c.map(|c| c.id)),
                fused_class: result.fused_class,
                raw_hb: result.raw_hb,
                calibrated_hb,
                severity,
                reduced_confidence: result.reduced_confidence,
                calibration,
                bundle_version: result.bundle_version,
            };
            Ok((vec![Event::ScreeningRecorded(s.clone())], s))
        })
    }

    /// Turns a submitted report (typed values or text) into a lab report.
    pub fn parse_report(input: &ReportInput) -> Result<LabReport, ServiceError> {
        match (&input.text, input.hb) {
            (Some(text), None) => Ok(parse_report_text(text)?),
            (None, Some(hb)) => Ok(LabReport::typed(hb, input.hct, input.mcv)?),
            _ => Err(ServiceError::invalid("give either 'hb' or 'text'", "reports")),
        }
    }

    /// Runs a report photograph through the configured OCR client.
    pub fn ocr_report(&self, image: &[u8]) -> Result<LabReport, ServiceError> {
        let client = self.ocr.as_deref().ok_or(ServiceError::Ocr(TransportError::NotConfigured.into()))?;
        Ok(ingest_report_image(image, client, &self.cfg.ocr)?)
    }

    fn nearest_screening<'a>(&self, screenings: &'a [Screening], t: i64) -> Option<&'a Screening> {
        screenings
            .iter()
            .filter(|s| (s.timestamp - t).abs() <= self.cfg.pairing_window_secs)
            .min_by_key(|s| ((s.timestamp - t).abs(), s.timestamp))
    }

    /// Stores a report; when a screening lies within the pairing window the
    /// patient's calibration is refit and a training sample is queued.
    pub fn ingest_report(&self, patient_id: &str, report: LabReport, timestamp: Option<i64>) -> Result<ReportOutcome, ServiceError> {
        let t = timestamp.or(report.timestamp).unwrap_or_else(now);
        self.commit(|state, seq| {
            let patient = Self::patient(state, patient_id)?;
            let stored = StoredReport {
                id: format!("r{seq}"),
                patient_id: patient_id.to_string(),
                report: LabReport { timestamp: Some(t), ..report.clone() },
                timestamp: t,
            };
            let mut events = vec![Event::ReportStored(stored.clone())];
            let screenings = state.screenings.get(patient_id).map_or(&[][..], |v| &v[..]);
            let mut calibration = state.calibration_for(patient_id);
            let paired = self.nearest_screening(screenings, t).cloned();
            if let Some(s) = &paired {
                let mut pairs: Vec<(f64, f64)> = state
                    .reports
                    .get(patient_id)
                    .into_iter()
                    .flatten()
                    .filter_map(|r| self.nearest_screening(screenings, r.timestamp).map(|s| (s.raw_hb, r.report.hb)))
                    .collect();
                pairs.push((s.raw_hb, stored.report.hb));
                calibration = fit_calibration(&pairs);
                events.push(Event::CalibrationUpdated { patient_id: patient_id.to_string(), params: calibration, timestamp: t });
                let active = self.active_bundle()?;
                let thresholds = self.thresholds(&active);
                let features: [FeatureVector; 3] = std::array::from_fn(|i| {
                    s.regions.get(i).map_or_else(|| FeatureVector::invalid(Region::ALL[i]), |r| r.features.clone())
                });
                let sample = LabelledSample {
                    patient_id: patient_id.to_string(),
                    features,
                    hb: stored.report.hb,
                    class: diagnose(stored.report.hb, &patient.demographics(), &thresholds)?,
                    timestamp: t,
                };
                events.push(Event::SampleQueued { report_id: stored.id.clone(), screening_id: s.id.clone(), sample });
            }
            let out = ReportOutcome {
                report: stored,
                paired_screening: paired.map(|s| s.id),
                calibration,
                queued: events.len() > 1,
            };
            Ok((events, out))
        })
    }

    /// Screenings and reports merged in time order.
    pub fn history(&self, patient_id: &str) -> Result<Vec<HistoryEntry>, ServiceError> {
        let state = self.snapshot();
        Self::patient(&state, patient_id)?;
        let mut out: Vec<HistoryEntry> = state
            .screenings
            .get(patient_id)
            .into_iter()
            .flatten()
            .cloned()
            .map(HistoryEntry::Screening)
            .chain(state.reports.get(patient_id).into_iter().flatten().cloned().map(HistoryEntry::Report))
            .collect();
        out.sort_by_key(HistoryEntry::timestamp);
        Ok(out)
    }

    pub fn calibration(&self, patient_id: &str) -> Result<CalibrationParams, ServiceError> {
        let state = self.snapshot();
        Self::patient(&state, patient_id)?;
        Ok(state.calibration_for(patient_id))
    }

    pub fn bundle_info(&self, version: Option<u32>) -> Result<BundleInfo, ServiceError> {
        let state = self.snapshot();
        let active = state.active_bundle.unwrap_or(0);
        let v = version.unwrap_or(active);
        let b = self
            .bundles
            .read()
            .expect("bundle lock")
            .get(&v)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown bundle version {v}")))?;
        Ok(BundleInfo {
            version: v,
            active: v == active,
            feature_version: b.feature_version,
            trained_at: b.trained_at,
            held_out_patients: b.held_out.len(),
            thresholds: b.thresholds.clone(),
            versions: state.bundle_versions.clone(),
        })
    }

    fn base_samples(&self) -> &BaseSamples {
        self.base.get_or_init(|| {
            let Some(dir) = &self.cfg.base_corpus else {
                return Ok((Vec::new(), BTreeMap::new()));
            };
            let thresholds = self.cfg.pipeline.threshold_table().map_err(|e| e.to_string())?;
            let patients = hbscan_core::dataset::read_corpus(dir).map_err(|e| e.to_string())?;
            let mut samples = extract_corpus(&patients, &self.cfg.pipeline, &thresholds, self.net.as_ref(), false).map_err(|e| e.to_string())?;
            for s in &mut samples {
                s.patient_id = format!("{BASE_PREFIX}{}", s.patient_id);
            }
            let demo = read_labels(dir)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|e| (format!("{BASE_PREFIX}{}", e.patient_id), e.demographics()))
                .collect();
            Ok((samples, demo))
        })
    }

    /// Retrains when at least `min_new` samples arrived since the last
    /// accepted retrain. The candidate goes live only if its held-out
    /// Spearman ρ is within the configured drop of the active bundle's.
    pub fn retrain(&self, min_new: usize, timestamp: Option<i64>) -> Result<RetrainDecision, ServiceError> {
        let _guard = self.retraining.try_lock().map_err(|_| ServiceError::Conflict("a retrain is already running".into()))?;
        let t = timestamp.unwrap_or_else(now);
        let state = self.snapshot();
        let new_samples = state.new_samples();
        let decide = |outcome, detail: String, base: Option<f64>, cand: Option<f64>, version: Option<u32>| RetrainDecision {
            outcome,
            detail,
            new_samples,
            baseline_spearman: base,
            candidate_spearman: cand,
            candidate_version: version,
            timestamp: t,
        };
        let log = |d: RetrainDecision, extra: Option<Event>| {
            self.commit(|_, _| {
                let mut ev = vec![Event::RetrainDecided(d.clone())];
                ev.extend(extra);
                Ok((ev, d))
            })
        };
        if new_samples < min_new {
            let d = decide(RetrainOutcome::NoOp, format!("{new_samples} new samples queued; {min_new} needed"), None, None, None);
            return log(d, None);
        }

        let (base, base_demo) = match self.base_samples() {
            Ok(b) => b.clone(),
            Err(e) => return log(decide(RetrainOutcome::Failed, format!("base corpus: {e}"), None, None, None), None),
        };
        let mut demo = base_demo;
        for (id, p) in &state.patients {
            demo.insert(id.clone(), p.demographics());
        }
        let mut samples = base;
        samples.extend(state.queue.iter().cloned());
        let test_fraction = if self.cfg.pipeline.test_fraction > 0.0 { self.cfg.pipeline.test_fraction } else { 0.2 };
        let split = split_by_patient(samples, test_fraction, self.cfg.pipeline.seed);
        let active = self.active_bundle()?;
        let thresholds = self.thresholds(&active);
        let version = state.bundle_versions.iter().max().copied().unwrap_or(0) + 1;

        let candidate = match self.trainer.train(&split.train, &self.cfg.pipeline, &thresholds, version, t, split.test_patients.clone()) {
            Ok(b) => b,
            Err(e) => return log(decide(RetrainOutcome::Failed, format!("training failed at {}: {e}", e.stage()), None, None, None), None),
        };
        let rho = |b: &ModelBundle| -> Option<f64> {
            let rows = evaluate_bundle(&split.test, &demo, b).ok()?;
            let r = metrics_from_predictions(&rows).spearman;
            r.is_finite().then_some(r)
        };
        let (base_rho, cand_rho) = (rho(&active), rho(&candidate));
        let accept = match (base_rho, cand_rho) {
            (Some(b), Some(c)) => c >= b - self.cfg.max_spearman_drop,
            (None, Some(_)) => true,
            (_, None) => false,
        };
        if !accept {
            let d = decide(RetrainOutcome::Rejected, "held-out Spearman regressed beyond the allowed drop".into(), base_rho, cand_rho, Some(version));
            return log(d, None);
        }
        let mut bytes = Vec::new();
        write_bundle(&candidate, &mut bytes)?;
        write_atomic(&bundle_path(&self.cfg.data_dir, version), &bytes)?;
        self.bundles.write().expect("bundle lock").insert(version, Arc::new(candidate));
        let d = decide(RetrainOutcome::Accepted, format!("bundle v{version} activated"), base_rho, cand_rho, Some(version));
        log(d, Some(Event::BundleActivated { version, timestamp: t }))
    }
}
