//! Held-out evaluation: per-sample predictions and summary metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::screen::screen_features;
use super::PipelineError;
use crate::dataset::LabelledSample;
use crate::models::{diagnose, Demographics, ModelBundle, ModelError, Severity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub planted_hb: f64,
    pub predicted_hb: f64,
    pub true_severity: Severity,
    pub predicted_severity: Severity,
    pub fused_class: Severity,
    pub reduced_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    /// Three-class severity accuracy.
    pub accuracy: f64,
    /// `confusion[truth][predicted]`, classes ordered severe, mild, non_anaemic.
    pub confusion: [[usize; 3]; 3],
    pub spearman: f64,
    /// Mean absolute error in g/dL.
    pub mae: f64,
}

/// Ranks with ties sharing their average rank (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks). NaN when either
/// side is constant or fewer than two values are given.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn mean_absolute_error(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

pub fn confusion_matrix(truth: &[Severity], pred: &[Severity]) -> [[usize; 3]; 3] {
    let mut m = [[0; 3]; 3];
    for (t, p) in truth.iter().zip(pred) {
        m[t.index()][p.index()] += 1;
    }
    m
}

pub fn metrics_from_predictions(rows: &[PredictionRow]) -> EvalMetrics {
    let pred: Vec<f64> = rows.iter().map(|r| r.predicted_hb).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.planted_hb).collect();
    let ts: Vec<Severity> = rows.iter().map(|r| r.true_severity).collect();
    let ps: Vec<Severity> = rows.iter().map(|r| r.predicted_severity).collect();
    let confusion = confusion_matrix(&ts, &ps);
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    EvalMetrics {
        n: rows.len(),
        accuracy: correct as f64 / rows.len().max(1) as f64,
        confusion,
        spearman: spearman(&pred, &truth),
        mae: mean_absolute_error(&pred, &truth),
    }
}

/// Screens every sample with `bundle` and diagnoses the raw prediction
/// (no personal calibration) against the bundle's threshold table.
pub fn evaluate_bundle(
    samples: &[LabelledSample],
    demographics: &BTreeMap<String, Demographics>,
    bundle: &ModelBundle,
) -> Result<Vec<PredictionRow>, PipelineError> {
    samples
        .iter()
        .map(|s| {
            let who = demographics
                .get(&s.patient_id)
                .ok_or_else(|| ModelError::InvalidData(format!("no demographics for patient {}", s.patient_id)))?;
            let r = screen_features(s.features.clone(), [0.0; 3], bundle)?;
            Ok(PredictionRow {
                patient_id: s.patient_id.clone(),
                planted_hb: s.hb,
                predicted_hb: r.raw_hb,
                true_severity: s.class,
                predicted_severity: diagnose(r.raw_hb, who, &bundle.thresholds)?,
                fused_class: r.fused_class,
                reduced_confidence: r.reduced_confidence,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_by_hand() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // ranks x = (1, 2, 3), y = (1, 3, 2): 1 − 6·2 / (3·8) = 0.5
        assert!((spearman(&[1.0, 2.0, 3.0], &[5.0, 9.0, 7.0]) - 0.5).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn confusion_and_accuracy() {
        use Severity::*;
        let row = |t, p, ph| PredictionRow {
            patient_id: "x".into(),
            planted_hb: 10.0,
            predicted_hb: ph,
            true_severity: t,
            predicted_severity: p,
            fused_class: p,
            reduced_confidence: false,
        };
        let m = metrics_from_predictions(&[row(Severe, Severe, 9.0), row(Mild, NonAnaemic, 12.0), row(NonAnaemic, NonAnaemic, 10.0)]);
        assert_eq!(m.confusion, [[1, 0, 0], [0, 0, 1], [0, 0, 1]]);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.mae - 1.0).abs() < 1e-12);
    }
}
