use std::collections::BTreeMap;

use hbscan_core::dataset::{read_labels, synth_corpus, write_corpus};
use hbscan_core::pipeline::{evaluate_bundle, metrics_from_predictions, train_from_corpus, PipelineConfig};

#[test]
fn synthetic_corpus_trains_and_generalises() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &synth_corpus(200, 7)).unwrap();
    let cfg = PipelineConfig::default();
    let (bundle, test) = train_from_corpus(dir.path(), &cfg, 1, 0).unwrap();
    let demo: BTreeMap<_, _> = read_labels(dir.path()).unwrap().into_iter().map(|e| (e.patient_id.clone(), e.demographics())).collect();
    let rows = evaluate_bundle(&test, &demo, &bundle).unwrap();
    let m = metrics_from_predictions(&rows);
    println!("{m:?}");
    assert_eq!(m.n, 40);
    assert!(m.spearman >= 0.9, "{m:?}");
    assert!(m.accuracy >= 0.85, "{m:?}");
}
