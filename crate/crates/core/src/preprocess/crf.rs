//! Binary Potts CRF over the 4-neighbourhood, solved by iterated conditional
//! modes in raster order.
//!
//! Energy: `E(L) = Σ_p −ln P(L_p) + w · Σ_{p~q} [L_p ≠ L_q]`, with the
//! foreground probability kept at least [`PROB_FLOOR`] away from 0 and 1.
//! Ties resolve to background.

use super::{PreprocessError, RegionMask};
use crate::imaging::PlaneF32;

pub const PROB_FLOOR: f64 = 1e-6;

#[inline]
fn unary_costs(p: f32) -> (f64, f64) {
    let p = (p as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (-(1.0 - p).ln(), -p.ln())
}

fn validate(unary: &PlaneF32) -> Result<(), PreprocessError> {
    if unary.data().iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
        Ok(())
    } else {
        Err(PreprocessError::InvalidUnary)
    }
}

pub fn potts_energy(unary: &PlaneF32, labels: &RegionMask, weight: f64) -> f64 {
    let (w, h) = (unary.width(), unary.height());
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (bg, fg) = unary_costs(unary.get(x, y));
            let l = labels.get(x, y);
            e += if l { fg } else { bg };
            if x + 1 < w && labels.get(x + 1, y) != l {
                e += weight;
            }
            if y + 1 < h && labels.get(x, y + 1) != l {
                e += weight;
            }
        }
    }
    e
}

/// Runs ICM and returns the mask plus the energy before the first sweep and
/// after every sweep.
pub fn crf_refine_traced(
    unary: &PlaneF32,
    weight: f64,
    max_iters: usize,
) -> Result<(RegionMask, Vec<f64>), PreprocessError> {
    validate(unary)?;
    let (w, h) = (unary.width(), unary.height());
    let weight = weight.max(0.0);
    let mut labels = RegionMask::from_fn(w, h, |x, y| unary.get(x, y) > 0.5);
    let mut trace = vec![potts_energy(unary, &labels, weight)];
    for _ in 0..max_iters {
        let mut flips = 0usize;
        for y in 0..h {
            for x in 0..w {
                let (mut cost_bg, mut cost_fg) = unary_costs(unary.get(x, y));
                let mut neighbour = |nx: usize, ny: usize| {
                    if labels.get(nx, ny) {
                        cost_bg += weight;
                    } else {
                        cost_fg += weight;
                    }
                };
                if x > 0 {
                    neighbour(x - 1, y);
                }
                if x + 1 < w {
                    neighbour(x + 1, y);
                }
                if y > 0 {
                    neighbour(x, y - 1);
                }
                if y + 1 < h {
                    neighbour(x, y + 1);
                }
                let next = cost_fg < cost_bg;
                if next != labels.get(x, y) {
                    labels.set(x, y, next);
                    flips += 1;
                }
            }
        }
        trace.push(potts_energy(unary, &labels, weight));
        if flips == 0 {
            break;
        }
    }
    Ok((labels, trace))
}

pub fn crf_refine(unary: &PlaneF32, weight: f64, max_iters: usize) -> Result<RegionMask, PreprocessError> {
    crf_refine_traced(unary, weight, max_iters).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_is_argmax() {
        let u = PlaneF32::from_fn(9, 7, |x, y| ((x * 13 + y * 7) % 11) as f32 / 10.0);
        let m = crf_refine(&u, 0.0, 10).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                assert_eq!(m.get(x, y), u.get(x, y) > 0.5);
            }
        }
    }

    #[test]
    fn lone_dissenter_flips_to_background() {
        // fg cost -ln 0.6 + 4·1 = 4.51 > bg cost -ln 0.4 = 0.92
        let u = PlaneF32::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 0.6 } else { 0.05 });
        let m = crf_refine(&u, 1.0, 10).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn uniform_half_is_background() {
        let u = PlaneF32::filled(6, 6, 0.5);
        assert!(crf_refine(&u, 0.7, 5).unwrap().is_empty());
    }

    #[test]
    fn saturated_probabilities_stay_finite() {
        let u = PlaneF32::from_fn(4, 4, |x, _| if x < 2 { 0.0 } else { 1.0 });
        let (m, trace) = crf_refine_traced(&u, 0.5, 4).unwrap();
        assert!(trace.iter().all(|e| e.is_finite()));
        assert_eq!(m.count(), 8);
    }

    #[test]
    fn out_of_range_unary_rejected() {
        let u = PlaneF32::filled(2, 2, 1.5);
        assert_eq!(crf_refine(&u, 1.0, 1), Err(PreprocessError::InvalidUnary));
    }
}
