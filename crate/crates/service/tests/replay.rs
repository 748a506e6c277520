mod common;

use common::*;
use hbscan_core::reports::LabReport;
use hbscan_service::RetrainOutcome;

const HOUR: i64 = 3600;

#[test]
fn restart_replays_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = scripted_bundle(0, 10.0, 1, 12.0);
    let before = {
        let svc = open(dir.path(), Some(bundle));
        svc.create_patient(adult_woman("ana")).unwrap();
        capture_all(&svc, "ana", &pngs(0), 0);
        svc.run_screening("ana", Some(HOUR)).unwrap();
        svc.ingest_report("ana", LabReport::typed(11.0, Some(35.0), None).unwrap(), Some(2 * HOUR)).unwrap();
        svc.ingest_capture("ana", hbscan_core::features::Region::Nailbed, &pngs(1)[0], Some(50 * HOUR)).unwrap();
        svc.run_screening("ana", Some(50 * HOUR)).unwrap();
        svc.ingest_report("ana", LabReport::typed(13.0, None, None).unwrap(), Some(51 * HOUR)).unwrap();
        assert_eq!(svc.retrain(25, Some(52 * HOUR)).unwrap().outcome, RetrainOutcome::NoOp);
        let cal = svc.calibration("ana").unwrap();
        assert!((cal.gain - 1.0).abs() < 1e-9 && (cal.offset - 1.0).abs() < 1e-9, "{cal:?}");
        (serde_json::to_vec(&svc.history("ana").unwrap()).unwrap(), serde_json::to_vec(&*svc.snapshot()).unwrap())
    };
    let log = std::fs::read(dir.path().join("events.jsonl")).unwrap();

    let svc = open(dir.path(), None);
    let after = (serde_json::to_vec(&svc.history("ana").unwrap()).unwrap(), serde_json::to_vec(&*svc.snapshot()).unwrap());
    assert_eq!(before, after);
    assert_eq!(std::fs::read(dir.path().join("events.jsonl")).unwrap(), log, "reopening must not append");
}

#[test]
fn torn_tail_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let svc = open(dir.path(), Some(hbscan_core::models::ModelBundle::constant([6.0, 10.0, 14.0])));
        svc.create_patient(adult_woman("ana")).unwrap();
    }
    let path = dir.path().join("events.jsonl");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.extend_from_slice(b"{\"seq\":3,\"type\":\"patient_cr");
    std::fs::write(&path, bytes).unwrap();
    let err = hbscan_service::Service::open(
        hbscan_service::ServiceConfig::new(dir.path()),
        None,
        Box::new(hbscan_service::DefaultTrainer),
        None,
    )
    .err()
    .unwrap();
    assert_eq!(err.code(), "storage_error");
}
