//! Huber-loss multilinear regression fitted by iteratively reweighted least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelError, Severity};

const HUBER_K: f64 = 1.345;
const MAD_SCALE: f64 = 1.4826;
const JITTER: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    /// L2 penalty on the standardised slopes; 0 gives plain Huber.
    pub ridge: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self { ridge: 0.0, max_iters: 50, tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub class: Severity,
    /// Slopes on the raw input scale.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Robust residual scale at convergence.
    pub tau: f64,
    /// Training means, used to impute missing inputs.
    pub feature_means: Vec<f64>,
    pub sample_count: usize,
}

impl RegressorModel {
    pub fn intercept_only(class: Severity, input_len: usize, intercept: f64) -> Self {
        Self {
            class,
            coefficients: vec![0.0; input_len],
            intercept,
            tau: 1.0,
            feature_means: vec![0.0; input_len],
            sample_count: 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != self.coefficients.len() {
            return Err(ModelError::LengthMismatch { got: row.len(), want: self.coefficients.len() });
        }
        Ok(self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>())
    }
}

/// Sum of Huber losses `r²/2` (|r| ≤ δ) and `δ|r| − δ²/2` beyond.
pub fn huber_objective(residuals: &[f64], delta: f64) -> f64 {
    residuals
        .iter()
        .map(|r| {
            let a = r.abs();
            if a <= delta { 0.5 * r * r } else { delta * a - 0.5 * delta * delta }
        })
        .sum()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn mad(residuals: &[f64]) -> f64 {
    let mut r = residuals.to_vec();
    let med = median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|x| (x - med).abs()).collect();
    median(&mut dev)
}

struct Design {
    x: DMatrix<f64>,
    means: Vec<f64>,
    /// (original column, mean, scale) for every kept column.
    kept: Vec<(usize, f64, f64)>,
}

// Standardised design with a leading intercept column; constant columns
// are dropped.
fn design(rows: &[Vec<f64>]) -> Result<Design, ModelError> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::InvalidData("rows must be finite and of equal length".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let mut kept = Vec::new();
    for j in 0..d {
        let sd = (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / nf).sqrt();
        if sd > 1e-12 * (1.0 + means[j].abs()) {
            kept.push((j, means[j], sd));
        }
    }
    let x = DMatrix::from_fn(n, kept.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            let (j, m, s) = kept[c - 1];
            (rows[i][j] - m) / s
        }
    });
    Ok(Design { x, means, kept })
}

fn solve_weighted(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], ridge: f64) -> Result<DVector<f64>, ModelError> {
    let p = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for (i, &wi) in w.iter().enumerate() {
        let row = x.row(i);
        for a in 0..p {
            let va = wi * row[a];
            xtwy[a] += va * y[i];
            for b in a..p {
                xtwx[(a, b)] += va * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
        if a > 0 {
            xtwx[(a, a)] += ridge;
        }
    }
    if let Some(ch) = xtwx.clone().cholesky() {
        return Ok(ch.solve(&xtwy));
    }
    for a in 0..p {
        xtwx[(a, a)] += JITTER;
    }
    xtwx.cholesky().map(|ch| ch.solve(&xtwy)).ok_or(ModelError::Singular)
}

fn residuals(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (y - x * beta).iter().copied().collect()
}

fn objective(res: &[f64], delta: f64, beta: &DVector<f64>, ridge: f64) -> f64 {
    huber_objective(res, delta) + 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

fn unstandardise(beta: &DVector<f64>, design: &Design, d: usize) -> (Vec<f64>, f64) {
    let mut coef = vec![0.0; d];
    let mut intercept = beta[0];
    for (c, &(j, m, s)) in design.kept.iter().enumerate() {
        coef[j] = beta[c + 1] / s;
        intercept -= beta[c + 1] * m / s;
    }
    (coef, intercept)
}

/// Ordinary least squares, returned as `(coefficients, intercept)`.
pub fn fit_ols(rows: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64), ModelError> {
    if rows.len() != y.len() || rows.is_empty() {
        return Err(ModelError::InvalidData("rows and targets must be non-empty and aligned".into()));
    }
    let des = design(rows)?;
    let yv = DVector::from_column_slice(y);
    let beta = solve_weighted(&des.x, &yv, &vec![1.0; y.len()], 0.0)?;
    Ok(unstandardise(&beta, &des, rows[0].len()))
}

/// Fits the regressor and returns the Huber objective after every iteration
/// (the first entry is at the OLS start).
///
/// The scale τ is re-estimated from the residuals each iteration but never
/// allowed to grow. Shrinking δ can only lower every Huber term, so together
/// with the IRLS majorisation step the objective sequence cannot rise; an
/// iterate that would raise it (possible only through the jitter fallback)
/// ends the loop.
pub fn train_regressor_traced(
    rows: &[Vec<f64>],
    hb: &[f64],
    class: Severity,
    cfg: &RegressorConfig,
) -> Result<(RegressorModel, Vec<f64>), ModelError> {
    if rows.len() != hb.len() {
        return Err(ModelError::InvalidData(format!("{} rows but {} targets", rows.len(), hb.len())));
    }
    if hb.iter().any(|v| !v.is_finite()) || !(cfg.ridge >= 0.0) {
        return Err(ModelError::InvalidData("targets must be finite and ridge >= 0".into()));
    }
    let d = rows.first().map_or(0, |r| r.len());
    if rows.len() < d + 2 {
        return Err(ModelError::TooFewSamples { class, need: d + 2, got: rows.len() });
    }
    let des = design(rows)?;
    let n = rows.len();

    if hb.iter().all(|&v| v == hb[0]) {
        let mut m = RegressorModel::intercept_only(class, d, hb[0]);
        m.feature_means = des.means;
        m.sample_count = n;
        return Ok((m, vec![0.0]));
    }

    let y = DVector::from_column_slice(hb);
    let mut beta = solve_weighted(&des.x, &y, &vec![1.0; n], cfg.ridge)?;
    let mut res = residuals(&des.x, &y, &beta);
    let mut tau = MAD_SCALE * mad(&res);
    if tau <= 0.0 {
        // exact fit for at least half the samples
        tau = f64::MIN_POSITIVE.max(res.iter().fold(0.0f64, |m, r| m.max(r.abs())));
        if tau <= f64::MIN_POSITIVE {
            tau = 1.0;
        }
    }
    let mut obj = objective(&res, HUBER_K * tau, &beta, cfg.ridge);
    let mut trace = vec![obj];

    for _ in 0..cfg.max_iters {
        let delta = HUBER_K * tau;
        let w: Vec<f64> = res.iter().map(|r| if r.abs() <= delta { 1.0 } else { delta / r.abs() }).collect();
        let next = solve_weighted(&des.x, &y, &w, cfg.ridge)?;
        let next_res = residuals(&des.x, &y, &next);
        let next_tau = {
            let t = MAD_SCALE * mad(&next_res);
            if t > 0.0 { tau.min(t) } else { tau }
        };
        let next_obj = objective(&next_res, HUBER_K * next_tau, &next, cfg.ridge);
        if next_obj > obj {
            break;
        }
        let change = (&next - &beta).amax();
        beta = next;
        res = next_res;
        tau = next_tau;
        obj = next_obj;
        trace.push(obj);
        if change < cfg.tol {
            break;
        }
    }

    let (coefficients, intercept) = unstandardise(&beta, &des, d);
    let model = RegressorModel { class, coefficients, intercept, tau, feature_means: des.means, sample_count: n };
    Ok((model, trace))
}

pub fn train_regressor(rows: &[Vec<f64>], hb: &[f64], class: Severity, cfg: &RegressorConfig) -> Result<RegressorModel, ModelError> {
    train_regressor_traced(rows, hb, class, cfg).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planted_noiseless_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(0.0..10.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 3.0 * r[1] + 1.0).collect();
        let m = train_regressor(&rows, &y, Severity::Mild, &RegressorConfig::default()).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
        assert!((m.coefficients[1] + 3.0).abs() < 1e-6);
        assert!((m.intercept - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_targets_give_intercept_only() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = train_regressor(&rows, &[11.5; 10], Severity::Severe, &RegressorConfig::default()).unwrap();
        assert_eq!(m.intercept, 11.5);
        assert_eq!(m.coefficients, vec![0.0, 0.0]);
        assert_eq!(m.predict(&[100.0, -4.0]).unwrap(), 11.5);
    }

    #[test]
    fn too_few_samples() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        assert_eq!(
            train_regressor(&rows, &[1.0, 2.0, 3.0, 4.0], Severity::Mild, &RegressorConfig::default()),
            Err(ModelError::TooFewSamples { class: Severity::Mild, need: 5, got: 4 })
        );
    }

    #[test]
    fn outliers_hurt_ols_more_than_huber() {
        let truth = [1.5, -2.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..120).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let clean: f64 = 4.0 + r.iter().zip(&truth).map(|(x, c)| x * c).sum::<f64>() + rng.random_range(-0.05..0.05);
                if i % 10 == 0 { clean + 50.0 } else { clean }
            })
            .collect();
        let err = |c: &[f64]| c.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let (m, trace) = train_regressor_traced(&rows, &y, Severity::NonAnaemic, &RegressorConfig::default()).unwrap();
        let (ols, _) = fit_ols(&rows, &y).unwrap();
        assert!(err(&m.coefficients) < err(&ols));
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.tau > 0.0);
    }

    #[test]
    fn constant_columns_are_ignored() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 7.0]).collect();
        let y: Vec<f64> = (0..12).map(|i| 3.0 * i as f64 - 1.0).collect();
        let m = train_regressor(&rows, &y, Severity::Mild, &RegressorConfig::default()).unwrap();
        assert_eq!(m.coefficients[1], 0.0);
        assert!((m.coefficients[0] - 3.0).abs() < 1e-9);
        assert!((m.predict(&[4.0, 7.0]).unwrap() - 11.0).abs() < 1e-9);
    }

    #[test]
    fn huber_objective_by_hand() {
        // 0.5 in the quadratic zone, 2·3 − 2 = 4 in the linear zone
        assert_eq!(huber_objective(&[1.0, -3.0], 2.0), 4.5);
    }
}
