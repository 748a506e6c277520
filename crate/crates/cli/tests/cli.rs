use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hbscan(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hbscan"));
    cmd.env_remove("HBSCAN_CONFIG");
    let mut paths = paths.iter();
    for a in args {
        if *a == "{}" {
            cmd.arg(paths.next().expect("path for placeholder"));
        } else {
            cmd.arg(a);
        }
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs_and_job_counts() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&hbscan(&["synth", "--n", "12", "--seed", "7", "--output", "{}"], &[&a]));
    ok(&hbscan(&["synth", "--n", "12", "--seed", "7", "--jobs", "1", "--output", "{}"], &[&b]));
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    assert_eq!(ta.len(), 12 * 3 + 1);
    assert!(ta == tb);
}

#[test]
fn train_predict_evaluate_round() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("corpus");
    let bundle = t.path().join("b.hbmb");
    ok(&hbscan(&["synth", "--n", "60", "--seed", "5", "--output", "{}"], &[&corpus]));
    ok(&hbscan(&["train", "--input", "{}", "--output", "{}"], &[&corpus, &bundle]));
    let again = t.path().join("b2.hbmb");
    ok(&hbscan(&["train", "--jobs", "1", "--input", "{}", "--output", "{}"], &[&corpus, &again]));
    assert!(std::fs::read(&bundle).unwrap() == std::fs::read(&again).unwrap(), "training is not reproducible");

    // Highest planted Hb in the corpus should screen as non-anaemic.
    let labels = std::fs::read_to_string(corpus.join("labels.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(labels.as_bytes());
    let headers = rd.headers().unwrap().clone();
    let (id_col, hb_col) = (headers.iter().position(|h| h == "patient_id").unwrap(), headers.iter().position(|h| h == "hb").unwrap());
    let (id, hb) = rd
        .records()
        .map(|r| r.unwrap())
        .map(|r| (r[id_col].to_string(), r[hb_col].parse::<f64>().unwrap()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(hb >= 15.0, "corpus max hb {hb}");
    let out = hbscan(
        &["predict", "--input", "{}", "--bundle", "{}", "--age", "30", "--sex", "male"],
        &[&corpus.join(format!("patient_{id}")), &bundle],
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["severity"], "non_anaemic", "{v}");
    assert_eq!(v["calibrated_hb"], v["raw_hb"]);
    assert_eq!(v["group"], "man");
    assert_eq!(v["regions"].as_array().unwrap().len(), 3);

    let (e1, e2) = (t.path().join("e1"), t.path().join("e2"));
    ok(&hbscan(&["evaluate", "--input", "{}", "--bundle", "{}", "--output", "{}"], &[&corpus, &bundle, &e1]));
    ok(&hbscan(&["evaluate", "--jobs", "1", "--input", "{}", "--bundle", "{}", "--output", "{}"], &[&corpus, &bundle, &e2]));
    assert!(tree_bytes(&e1) == tree_bytes(&e2));
    let m: Value = serde_json::from_slice(&std::fs::read(e1.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["n"], 12);
    let csv_text = std::fs::read_to_string(e1.join("metrics.csv")).unwrap();
    assert!(csv_text.starts_with("metric,value\nn,12\n"));
    assert_eq!(csv_text.lines().filter(|l| l.starts_with("confusion_")).count(), 9);
}

#[test]
fn stage_commands_write_their_outputs() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("corpus");
    ok(&hbscan(&["synth", "--n", "2", "--output", "{}"], &[&corpus]));
    // Patient 0001 has a colour cast strong enough that no sclera is found.
    let patient = corpus.join("patient_0002");

    let pre = t.path().join("pre");
    ok(&hbscan(&["preprocess", "--input", "{}", "--output", "{}"], &[&patient, &pre]));
    for r in ["nailbed", "conjunctiva", "tongue"] {
        for kind in ["corrected", "enhanced", "glare"] {
            assert!(pre.join(format!("{r}_{kind}.png")).is_file(), "{r}_{kind}");
        }
    }
    assert!(pre.join("conjunctiva_sclera.png").is_file());

    let seg = t.path().join("seg");
    ok(&hbscan(&["segment", "--input", "{}", "--output", "{}"], &[&patient.join("tongue.png"), &seg]));
    let s: Value = serde_json::from_slice(&std::fs::read(seg.join("tongue_segment.json")).unwrap()).unwrap();
    assert_eq!(s["low_confidence"], false);
    assert!(s["roi_area_fraction"].as_f64().unwrap() > 0.05);
    assert!(seg.join("tongue_mask.png").is_file());

    let feats = t.path().join("f.csv");
    ok(&hbscan(&["features", "--input", "{}", "--output", "{}"], &[&corpus, &feats]));
    let text = std::fs::read_to_string(&feats).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[0].starts_with("patient_id,region,valid,"));
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(hbscan(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(hbscan(&["synth"], &[]).status.code(), Some(1));

    let cfg = t.path().join("bad.toml");
    std::fs::write(&cfg, "[slic]\nk = 64\nwibble = 1\n").unwrap();
    let out = hbscan(&["--config", "{}", "synth", "--n", "1", "--output", "{}"], &[&cfg, &t.path().join("x")]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, "[clahe]\ntiles_x = 0\ntiles_y = 4\nclip_limit = 2.0\n").unwrap();
    let out = hbscan(&["--config", "{}", "synth", "--n", "1", "--output", "{}"], &[&cfg, &t.path().join("x")]);
    assert_eq!(out.status.code(), Some(2));

    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let bundle = t.path().join("missing.hbmb");
    let out = hbscan(&["predict", "--input", "{}", "--bundle", "{}", "--age", "30", "--sex", "female"], &[&empty, &bundle]);
    assert_eq!(out.status.code(), Some(3));

    let corpus = t.path().join("c");
    let b = t.path().join("b.hbmb");
    ok(&hbscan(&["synth", "--n", "30", "--output", "{}"], &[&corpus]));
    ok(&hbscan(&["train", "--input", "{}", "--output", "{}"], &[&corpus, &b]));
    let out = hbscan(&["predict", "--input", "{}", "--bundle", "{}", "--age", "30", "--sex", "female"], &[&empty, &b]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    for r in ["nailbed", "conjunctiva", "tongue"] {
        assert!(msg.contains(r), "{msg}");
    }
}
