use super::{PreprocessError, RegionMask};
use crate::imaging::PlaneF32;
use crate::par;

/// Mean over a `window × window` neighbourhood with edge replication.
pub fn box_mean(plane: &PlaneF32, window: usize) -> Vec<f64> {
    let (w, h) = (plane.width(), plane.height());
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = par::map_range(h, |y| {
        (0..w)
            .map(|x| {
                (-r..=r)
                    .map(|dx| plane.get(clamp(x as isize + dx, w), y) as f64)
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let area = (window * window) as f64;
    let out = par::map_range(h, |y| {
        (0..w)
            .map(|x| (-r..=r).map(|dy| rows[clamp(y as isize + dy, h)][x]).sum::<f64>() / area)
            .collect::<Vec<f64>>()
    });
    out.concat()
}

/// Foreground where the pixel exceeds its local mean by more than `offset`
/// (`value > mean + offset`); a negative offset admits pixels slightly below
/// the mean.
pub fn adaptive_threshold(plane: &PlaneF32, window: usize, offset: f32) -> Result<RegionMask, PreprocessError> {
    if window < 3 || window % 2 == 0 {
        return Err(PreprocessError::InvalidWindow(window));
    }
    let mean = box_mean(plane, window);
    let bits = plane
        .data()
        .iter()
        .zip(&mean)
        .map(|(&v, &m)| v as f64 > m + offset as f64)
        .collect();
    Ok(RegionMask::from_bits(plane.width(), plane.height(), bits).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_follows_offset_sign() {
        let p = PlaneF32::filled(12, 9, 77.0);
        assert!(adaptive_threshold(&p, 5, 3.0).unwrap().is_empty());
        assert_eq!(adaptive_threshold(&p, 5, -3.0).unwrap().count(), 12 * 9);
    }

    #[test]
    fn even_or_tiny_window_rejected() {
        let p = PlaneF32::filled(4, 4, 0.0);
        for w in [0, 1, 2, 4] {
            assert_eq!(adaptive_threshold(&p, w, 1.0), Err(PreprocessError::InvalidWindow(w)));
        }
    }

    #[test]
    fn step_edge_boundary_is_near_true_edge() {
        // Columns 0..10 are 0, columns 10..20 are 200. With window 3 the windowed
        // means are 0 | 66.7 | 133.3 | 200 across the edge. Flat regions never beat
        // mean + 10; column 10 does (200 > 143.3) and column 9 does not (0 > 76.7),
        // so the only foreground column is the first one past the edge.
        let p = PlaneF32::from_fn(20, 6, |x, _| if x < 10 { 0.0 } else { 200.0 });
        let m = adaptive_threshold(&p, 3, 10.0).unwrap();
        for y in 0..6 {
            for x in 1..20 {
                if m.get(x, y) != m.get(x - 1, y) {
                    assert!((x as isize - 10).abs() <= 1, "transition at {x}");
                }
            }
            assert!(!m.get(9, y));
            assert!(m.get(10, y));
            assert_eq!((0..20).filter(|&x| m.get(x, y)).count(), 1);
        }
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let p = PlaneF32::from_fn(7, 5, |x, y| (x * 3 + y * 11 % 7) as f32);
        let fast = box_mean(&p, 5);
        for y in 0..5 {
            for x in 0..7 {
                let mut s = 0.0;
                for dy in -2i32..=2 {
                    for dx in -2i32..=2 {
                        let xx = (x as i32 + dx).clamp(0, 6) as usize;
                        let yy = (y as i32 + dy).clamp(0, 4) as usize;
                        s += p.get(xx, yy) as f64;
                    }
                }
                assert!((fast[y * 7 + x] - s / 25.0).abs() < 1e-9);
            }
        }
    }
}
