//! Multinomial logistic regression over standardised feature rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Severity};
use crate::features::{FeatureVector, FEATURE_VERSION};

const CLASSES: usize = 3;
const MAX_BACKOFFS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { l2: 1e-3, lr: 0.5, epochs: 500, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// Row-major `3 × input_len`, acting on standardised inputs.
    pub weights: Vec<f64>,
    pub bias: [f64; CLASSES],
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub feature_version: u32,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: Severity,
    pub probabilities: [f64; CLASSES],
}

impl ClassifierModel {
    /// All-zero model: uniform probabilities everywhere.
    pub fn zeros(input_len: usize) -> Self {
        Self {
            weights: vec![0.0; CLASSES * input_len],
            bias: [0.0; CLASSES],
            means: vec![0.0; input_len],
            scales: vec![1.0; input_len],
            feature_version: FEATURE_VERSION,
            sample_count: 0,
            seed: 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.means.len()
    }

    fn standardise(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &v), (&m, &s)) in out.iter_mut().zip(row).zip(self.means.iter().zip(&self.scales)) {
            *o = (v - m) / s;
        }
    }

    pub fn logits(&self, row: &[f64]) -> Result<[f64; CLASSES], ModelError> {
        let d = self.input_len();
        if row.len() != d {
            return Err(ModelError::LengthMismatch { got: row.len(), want: d });
        }
        let mut z = vec![0.0; d];
        self.standardise(row, &mut z);
        Ok(logits_std(&self.weights, &self.bias, &z))
    }
}

fn logits_std(weights: &[f64], bias: &[f64; CLASSES], z: &[f64]) -> [f64; CLASSES] {
    let d = z.len();
    let mut out = *bias;
    for (c, o) in out.iter_mut().enumerate() {
        *o += weights[c * d..(c + 1) * d].iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
    }
    out
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

// argmax with ties resolved toward the lower index, i.e. the more severe class
fn argmax(p: &[f64; CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

pub fn classify_row(model: &ClassifierModel, row: &[f64]) -> Result<Classification, ModelError> {
    if model.feature_version != FEATURE_VERSION {
        return Err(ModelError::VersionMismatch { got: FEATURE_VERSION, want: model.feature_version });
    }
    let probabilities = softmax(&model.logits(row)?);
    let class = Severity::from_index(argmax(&probabilities)).expect("three classes");
    Ok(Classification { class, probabilities })
}

pub fn classify(model: &ClassifierModel, fv: &FeatureVector) -> Result<Classification, ModelError> {
    classify_row(model, &fv.values)
}

fn mean_loss(weights: &[f64], bias: &[f64; CLASSES], z: &[Vec<f64>], labels: &[usize], l2: f64) -> f64 {
    let n = z.len() as f64;
    let ce: f64 = z
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let l = logits_std(weights, bias, row);
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - l[y]
        })
        .sum();
    ce / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Trains the classifier and also returns the loss after every accepted step
/// (the first entry is the loss at initialisation).
pub fn train_classifier_traced(
    rows: &[Vec<f64>],
    labels: &[Severity],
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<f64>), ModelError> {
    if rows.len() != labels.len() {
        return Err(ModelError::InvalidData(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if !(cfg.l2 >= 0.0 && cfg.l2.is_finite() && cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(ModelError::InvalidData("l2 must be >= 0 and lr > 0".into()));
    }
    for class in Severity::ALL {
        if !labels.contains(&class) {
            return Err(ModelError::MissingClass(class));
        }
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::InvalidData("rows must be finite and of equal length".into()));
    }
    let n = rows.len();
    let nf = n as f64;
    let means: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / nf;
            if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(means.iter().zip(&scales)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let y: Vec<usize> = labels.iter().map(|c| c.index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w: Vec<f64> = (0..CLASSES * d).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut b = [0.0; CLASSES];
    let mut loss = mean_loss(&w, &b, &z, &y, cfg.l2);
    let mut trace = vec![loss];
    let mut lr = cfg.lr;
    let mut backoffs = 0;

    let mut gw = vec![0.0; CLASSES * d];
    'epochs: for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = [0.0; CLASSES];
        for (row, &label) in z.iter().zip(&y) {
            let p = softmax(&logits_std(&w, &b, row));
            for c in 0..CLASSES {
                let err = (p[c] - if c == label { 1.0 } else { 0.0 }) / nf;
                gb[c] += err;
                for (g, x) in gw[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *g += err * x;
                }
            }
        }
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g += cfg.l2 * wv;
        }
        loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wv, g)| wv - lr * g).collect();
            let mut cand_b = b;
            for c in 0..CLASSES {
                cand_b[c] -= lr * gb[c];
            }
            let cand_loss = mean_loss(&cand_w, &cand_b, &z, &y, cfg.l2);
            if cand_loss <= loss {
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                trace.push(loss);
                break;
            }
            backoffs += 1;
            if backoffs > MAX_BACKOFFS {
                break 'epochs;
            }
            lr *= 0.5;
        }
    }

    let model = ClassifierModel {
        weights: w,
        bias: b,
        means,
        scales,
        feature_version: FEATURE_VERSION,
        sample_count: n,
        seed: cfg.seed,
    };
    Ok((model, trace))
}

pub fn train_classifier(rows: &[Vec<f64>], labels: &[Severity], cfg: &ClassifierConfig) -> Result<ClassifierModel, ModelError> {
    train_classifier_traced(rows, labels, cfg).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(per_class: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Severity>) {
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(vec![centre[0] + noise.sample(&mut rng), centre[1] + noise.sample(&mut rng)]);
                labels.push(Severity::from_index(c).unwrap());
            }
        }
        (rows, labels)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (rows, labels) = blobs(100, 0.1, 1);
        let (m, trace) = train_classifier_traced(&rows, &labels, &ClassifierConfig::default()).unwrap();
        let correct = rows.iter().zip(&labels).filter(|(r, l)| classify_row(&m, r).unwrap().class == **l).count();
        assert_eq!(correct, rows.len());
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn identical_rows_give_uniform_probabilities() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 30];
        let labels: Vec<Severity> = (0..30).map(|i| Severity::from_index(i % 3).unwrap()).collect();
        let m = train_classifier(&rows, &labels, &ClassifierConfig::default()).unwrap();
        let p = classify_row(&m, &rows[0]).unwrap().probabilities;
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 0.01);
        }
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0]; 4];
        let labels = vec![Severity::Mild; 4];
        assert_eq!(train_classifier(&rows, &labels, &ClassifierConfig::default()), Err(ModelError::MissingClass(Severity::Severe)));
    }

    #[test]
    fn zero_model_is_uniform_and_picks_severe() {
        let c = classify_row(&ClassifierModel::zeros(4), &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(c.class, Severity::Severe);
        for v in c.probabilities {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn argmax_of_probabilities() {
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, 2f64.ln(), 4f64.ln()]);
        assert_abs_diff_eq!(p[0], 1.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 4.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn version_and_length_checked() {
        let mut m = ClassifierModel::zeros(2);
        assert!(matches!(classify_row(&m, &[1.0]), Err(ModelError::LengthMismatch { got: 1, want: 2 })));
        m.feature_version = FEATURE_VERSION + 1;
        assert!(matches!(classify_row(&m, &[1.0, 2.0]), Err(ModelError::VersionMismatch { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let (rows, labels) = blobs(20, 1.0, 3);
        let cfg = ClassifierConfig { epochs: 50, ..Default::default() };
        assert_eq!(train_classifier(&rows, &labels, &cfg).unwrap(), train_classifier(&rows, &labels, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0, k in -100.0f64..100.0) {
            let p = softmax(&[a, b, c]);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(argmax(&p), argmax(&softmax(&[a + k, b + k, c + k])));
        }
    }
}
