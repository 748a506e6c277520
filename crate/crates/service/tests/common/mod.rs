#![allow(dead_code)]

use hbscan_core::dataset::synth_patient;
use hbscan_core::features::{Metadata, Region};
use hbscan_core::imaging::encode_png;
use hbscan_core::models::{ModelBundle, Severity};
use hbscan_core::pipeline::{extract_patient, PipelineConfig};
use hbscan_service::{DefaultTrainer, NewPatient, Service, ServiceConfig};

pub const AGE: f64 = 30.0;
pub const ALTITUDE: f64 = 0.0;
/// Nailbed feature the scripted bundle reads (mean R − G).
pub const PROBE: usize = 24;

/// PNG bytes for the three regions of synthetic patient `index`.
pub fn pngs(index: usize) -> [Vec<u8>; 3] {
    let p = synth_patient(11, index);
    p.images.map(|img| encode_png(&img).unwrap())
}

fn nailbed_probe(index: usize) -> f64 {
    let p = synth_patient(11, index);
    let images = p.images.map(Some);
    let (f, _) = extract_patient(&images, Metadata { altitude_m: ALTITUDE, age_years: AGE }, &PipelineConfig::default(), None).unwrap();
    assert!(f[0].valid);
    f[0].values[PROBE]
}

/// Bundle whose classifiers answer `severe` and whose severe regressor maps
/// the nailbed of synthetic patient `a` to `hb_a` and patient `b` to `hb_b`.
pub fn scripted_bundle(a: usize, hb_a: f64, b: usize, hb_b: f64) -> ModelBundle {
    let (xa, xb) = (nailbed_probe(a), nailbed_probe(b));
    assert!((xa - xb).abs() > 1e-3, "probe feature does not separate the two patients");
    let mut bundle = ModelBundle::constant([hb_a, hb_a, hb_a]);
    let slope = (hb_b - hb_a) / (xb - xa);
    let r = &mut bundle.regressors[Severity::Severe.index()];
    r.coefficients[PROBE] = slope;
    r.intercept = hb_a - slope * xa;
    bundle
}

pub fn open(dir: &std::path::Path, bundle: Option<ModelBundle>) -> Service {
    Service::open(ServiceConfig::new(dir), bundle, Box::new(DefaultTrainer), None).unwrap()
}

pub fn adult_woman(id: &str) -> NewPatient {
    NewPatient {
        id: Some(id.into()),
        age_years: AGE,
        sex: hbscan_core::models::Sex::Female,
        pregnant: false,
        altitude_m: ALTITUDE,
        created_at: Some(0),
    }
}

pub fn capture_all(svc: &Service, id: &str, images: &[Vec<u8>; 3], t: i64) {
    for (region, bytes) in Region::ALL.into_iter().zip(images) {
        svc.ingest_capture(id, region, bytes, Some(t)).unwrap();
    }
}
