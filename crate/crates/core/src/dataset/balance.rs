//! Feature-space oversampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::models::Severity;

fn check_rows(rows: &[Vec<f64>]) -> Result<usize, DatasetError> {
    let d = rows.first().ok_or(DatasetError::EmptyRows)?.len();
    if rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(DatasetError::Ragged);
    }
    Ok(d)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// SMOTE: `x + λ(nn − x)` with `x` drawn uniformly, `nn` one of its `k`
/// nearest neighbours and `λ ~ U[0, 1]`.
pub fn smote(minority: &[Vec<f64>], k: usize, n_new: usize, seed: u64) -> Result<Vec<Vec<f64>>, DatasetError> {
    let n = minority.len();
    if n < 2 || k == 0 || k >= n {
        return Err(DatasetError::MinorityTooSmall { got: n, k });
    }
    check_rows(minority)?;
    if n_new == 0 {
        return Ok(Vec::new());
    }
    // neighbour lists, ties broken by index
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| dist2(&minority[i], &minority[a]).total_cmp(&dist2(&minority[i], &minority[b])).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_new)
        .map(|_| {
            let i = rng.random_range(0..n);
            let j = neighbours[i][rng.random_range(0..k)];
            let lambda: f64 = rng.random_range(0.0..=1.0);
            minority[i].iter().zip(&minority[j]).map(|(x, y)| x + lambda * (y - x)).collect()
        })
        .collect())
}

/// ROSE: a uniformly drawn row plus Gaussian noise with per-dimension
/// std `h · sd_j` (population sd of the input column).
pub fn rose(rows: &[Vec<f64>], h: f64, n_new: usize, seed: u64) -> Result<Vec<Vec<f64>>, DatasetError> {
    let d = check_rows(rows)?;
    let n = rows.len() as f64;
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            (rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect();
    let h = h.max(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok((0..n_new)
        .map(|_| {
            let base = &rows[rng.random_range(0..rows.len())];
            base.iter()
                .zip(&sd)
                .map(|(x, s)| {
                    let z: f64 = std_normal.sample(&mut rng);
                    if *s == 0.0 || h == 0.0 { *x } else { x + h * s * z }
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Balancer {
    Smote { k: usize },
    Rose { h: f64 },
}

impl Default for Balancer {
    fn default() -> Self {
        Balancer::Smote { k: 5 }
    }
}

/// Oversamples every class up to `max(largest class, min_per_class)` rows.
///
/// Classes with a single row cannot be interpolated and are duplicated
/// instead; empty classes are left empty.
pub fn balance_to_parity(
    rows: &[Vec<f64>],
    labels: &[Severity],
    balancer: Balancer,
    min_per_class: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Severity>), DatasetError> {
    if rows.len() != labels.len() {
        return Err(DatasetError::Ragged);
    }
    let counts = Severity::ALL.map(|c| labels.iter().filter(|l| **l == c).count());
    let target = counts.iter().copied().max().unwrap_or(0).max(min_per_class);
    let mut out_rows = rows.to_vec();
    let mut out_labels = labels.to_vec();
    for class in Severity::ALL {
        let members: Vec<Vec<f64>> = rows.iter().zip(labels).filter(|(_, l)| **l == class).map(|(r, _)| r.clone()).collect();
        let need = target.saturating_sub(members.len());
        if members.is_empty() || need == 0 {
            continue;
        }
        let class_seed = seed.wrapping_add(class.index() as u64 * 0x9E37_79B9);
        let new = match balancer {
            Balancer::Smote { k } if members.len() >= 2 => smote(&members, k.clamp(1, members.len() - 1), need, class_seed)?,
            Balancer::Smote { .. } => rose(&members, 0.0, need, class_seed)?,
            Balancer::Rose { h } => rose(&members, h, need, class_seed)?,
        };
        out_labels.extend(std::iter::repeat_n(class, new.len()));
        out_rows.extend(new);
    }
    Ok((out_rows, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_give_segment() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0]];
        for p in smote(&pts, 1, 200, 3).unwrap() {
            assert!(p[0] >= 0.0 && p[0] <= 2.0);
            assert!((p[1] - 2.0 * p[0]).abs() < 1e-12);
        }
        assert!(smote(&pts, 1, 0, 3).unwrap().is_empty());
    }

    #[test]
    fn smote_preconditions() {
        assert!(matches!(smote(&[vec![1.0]], 1, 5, 0), Err(DatasetError::MinorityTooSmall { .. })));
        assert!(matches!(smote(&[vec![1.0], vec![2.0]], 2, 5, 0), Err(DatasetError::MinorityTooSmall { .. })));
    }

    #[test]
    fn rose_zero_bandwidth_copies_rows() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.5, 5.0]];
        for r in rose(&rows, 0.0, 50, 1).unwrap() {
            assert!(rows.contains(&r));
        }
        for r in rose(&rows, 2.0, 50, 1).unwrap() {
            assert_eq!(r[1], 5.0);
        }
    }

    #[test]
    fn rose_mean_within_three_standard_errors() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64 / 10.0]).collect();
        let n = 10_000;
        let h = 0.5;
        let out = rose(&rows, h, n, 42).unwrap();
        for j in 0..2 {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / 20.0;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 20.0;
            // draw = uniform base row + h·sd noise, so Var = var·(1 + h²)
            let se = (var * (1.0 + h * h) / n as f64).sqrt();
            let got = out.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            assert!((got - m).abs() < 3.0 * se, "dim {j}: {got} vs {m}");
        }
    }

    #[test]
    fn parity_and_original_rows_kept() {
        let rows: Vec<Vec<f64>> = (0..17).map(|i| vec![i as f64, 1.0]).collect();
        let labels: Vec<Severity> = (0..17).map(|i| if i < 10 { Severity::NonAnaemic } else if i < 15 { Severity::Mild } else { Severity::Severe }).collect();
        let (r, l) = balance_to_parity(&rows, &labels, Balancer::default(), 0, 1).unwrap();
        assert_eq!(&r[..17], &rows[..]);
        for c in Severity::ALL {
            assert_eq!(l.iter().filter(|x| **x == c).count(), 10);
        }
        let (_, l) = balance_to_parity(&rows, &labels, Balancer::Rose { h: 0.3 }, 12, 1).unwrap();
        assert_eq!(l.len(), 36);
    }

    proptest! {
        #[test]
        fn smote_stays_in_bounding_box(seed in 0u64..1000, n in 2usize..8) {
            let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![(i * 7 % 5) as f64, (i * 3 % 4) as f64 - 1.0]).collect();
            for p in smote(&pts, 1, 20, seed).unwrap() {
                for j in 0..2 {
                    let lo = pts.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                    let hi = pts.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p[j] >= lo - 1e-12 && p[j] <= hi + 1e-12);
                }
            }
        }
    }
}
