//! Contrast-limited adaptive histogram equalisation on a single 8-bit range plane.

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::imaging::PlaneF32;
use crate::par;

pub const CLAHE_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaheConfig {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Clip ceiling as a multiple of the uniform bin height (tile pixels / 256).
    /// `f32::INFINITY` disables clipping.
    pub clip_limit: f32,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self { tiles_x: 8, tiles_y: 8, clip_limit: 4.0 }
    }
}

impl ClaheConfig {
    pub fn new(tiles_x: usize, tiles_y: usize, clip_limit: f32) -> Result<Self, PreprocessError> {
        let cfg = Self { tiles_x, tiles_y, clip_limit };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unclipped(tiles_x: usize, tiles_y: usize) -> Self {
        Self { tiles_x, tiles_y, clip_limit: f32::INFINITY }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(PreprocessError::InvalidClaheConfig("tile counts must be at least 1".into()));
        }
        if self.clip_limit.is_nan() || self.clip_limit < 1.0 {
            return Err(PreprocessError::InvalidClaheConfig(format!(
                "clip limit {} is below the uniform bin height",
                self.clip_limit
            )));
        }
        Ok(())
    }

    fn ceiling(&self, tile_pixels: usize) -> u32 {
        if self.clip_limit.is_infinite() {
            return tile_pixels as u32;
        }
        let c = (self.clip_limit as f64 * tile_pixels as f64 / CLAHE_BINS as f64).floor();
        (c as u32).clamp(1, tile_pixels as u32)
    }
}

#[inline]
fn bin_of(v: f32) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

/// Cuts every bin down to `ceiling`, returning the number of removed counts.
pub fn clip_histogram(hist: &mut [u32; CLAHE_BINS], ceiling: u32) -> u32 {
    let mut excess = 0;
    for h in hist.iter_mut() {
        if *h > ceiling {
            excess += *h - ceiling;
            *h = ceiling;
        }
    }
    excess
}

/// Single redistribution pass: equal share to every bin, remainder to bin 0.
pub fn redistribute_excess(hist: &mut [u32; CLAHE_BINS], excess: u32) {
    let share = excess / CLAHE_BINS as u32;
    let residue = excess % CLAHE_BINS as u32;
    for h in hist.iter_mut() {
        *h += share;
    }
    hist[0] += residue;
}

fn tile_bounds(i: usize, tiles: usize, len: usize) -> (usize, usize) {
    (i * len / tiles, (i + 1) * len / tiles)
}

fn tile_lut(plane: &PlaneF32, cfg: &ClaheConfig, tx: usize, ty: usize) -> [f32; CLAHE_BINS] {
    let (x0, x1) = tile_bounds(tx, cfg.tiles_x, plane.width());
    let (y0, y1) = tile_bounds(ty, cfg.tiles_y, plane.height());
    let mut hist = [0u32; CLAHE_BINS];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[bin_of(plane.get(x, y))] += 1;
        }
    }
    let mut lut = [0f32; CLAHE_BINS];
    // A single occupied bin carries no contrast to redistribute.
    if hist.iter().filter(|&&h| h > 0).count() <= 1 {
        for (i, l) in lut.iter_mut().enumerate() {
            *l = i as f32;
        }
        return lut;
    }
    let npix = ((x1 - x0) * (y1 - y0)) as u64;
    let excess = clip_histogram(&mut hist, cfg.ceiling(npix as usize));
    redistribute_excess(&mut hist, excess);
    let mut cdf = 0u64;
    for (l, &h) in lut.iter_mut().zip(hist.iter()) {
        cdf += h as u64;
        *l = ((cdf * 255 + npix / 2) / npix) as f32;
    }
    lut
}

/// Interpolation anchors along one axis: (lower tile, upper tile, weight of upper).
#[inline]
fn anchors(pos: usize, len: usize, tiles: usize) -> (usize, usize, f64) {
    let g = (pos as f64 + 0.5) * tiles as f64 / len as f64 - 0.5;
    let lo = (g.floor().max(0.0) as usize).min(tiles - 1);
    let hi = (lo + 1).min(tiles - 1);
    let t = if hi == lo { 0.0 } else { (g - lo as f64).clamp(0.0, 1.0) };
    (lo, hi, t)
}

/// CLAHE with bilinear blending between the four surrounding tile mappings.
pub fn clahe(plane: &PlaneF32, cfg: &ClaheConfig) -> Result<PlaneF32, PreprocessError> {
    cfg.validate()?;
    let (w, h) = (plane.width(), plane.height());
    if w < 2 * cfg.tiles_x || h < 2 * cfg.tiles_y {
        return Err(PreprocessError::TileGridTooLarge {
            tiles_x: cfg.tiles_x,
            tiles_y: cfg.tiles_y,
            width: w,
            height: h,
        });
    }
    let luts = par::map_range(cfg.tiles_x * cfg.tiles_y, |i| {
        tile_lut(plane, cfg, i % cfg.tiles_x, i / cfg.tiles_x)
    });
    let lut = |tx: usize, ty: usize, bin: usize| luts[ty * cfg.tiles_x + tx][bin] as f64;
    let mut out = vec![0f32; w * h];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        let (ty0, ty1, ay) = anchors(y, h, cfg.tiles_y);
        for (x, o) in row.iter_mut().enumerate() {
            let (tx0, tx1, ax) = anchors(x, w, cfg.tiles_x);
            let b = bin_of(plane.get(x, y));
            let top = (1.0 - ax) * lut(tx0, ty0, b) + ax * lut(tx1, ty0, b);
            let bottom = (1.0 - ax) * lut(tx0, ty1, b) + ax * lut(tx1, ty1, b);
            *o = ((1.0 - ay) * top + ay * bottom) as f32;
        }
    });
    Ok(PlaneF32::new(w, h, out).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_is_fixed_point() {
        let p = PlaneF32::filled(64, 64, 87.0);
        let out = clahe(&p, &ClaheConfig::default()).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn hand_computed_two_value_mapping() {
        // 8x8, 1x1 grid, clip 2.0: uniform height 64/256 = 0.25, ceiling floor(0.5) -> 1.
        // 40 pixels at 50, 24 at 150. Clipping leaves 1+1 and removes 62, which
        // is below 256 so the whole residue lands in bin 0.
        // Histogram: bin0 = 62, bin50 = 1, bin150 = 1.
        // CDF: 62 at bins 0..49, 63 at 50..149, 64 from 150.
        // lut[50] = round(63*255/64) = round(251.02) = 251, lut[150] = 255.
        let p = PlaneF32::from_fn(8, 8, |x, y| if y * 8 + x < 40 { 50.0 } else { 150.0 });
        let out = clahe(&p, &ClaheConfig::new(1, 1, 2.0).unwrap()).unwrap();
        for (i, &v) in out.data().iter().enumerate() {
            let want = if i < 40 { 251.0 } else { 255.0 };
            assert_eq!(v, want, "pixel {i}");
        }
    }

    #[test]
    fn clipped_bins_respect_ceiling() {
        let mut hist = [0u32; CLAHE_BINS];
        hist[3] = 500;
        hist[9] = 20;
        hist[200] = 7;
        let excess = clip_histogram(&mut hist, 16);
        assert_eq!(excess, 484 + 4);
        assert!(hist.iter().all(|&h| h <= 16));
        redistribute_excess(&mut hist, excess);
        assert_eq!(hist.iter().sum::<u32>(), 527);
        assert_eq!(hist[0], 1 + 488 % 256);
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        let p = PlaneF32::filled(10, 10, 1.0);
        assert!(matches!(
            clahe(&p, &ClaheConfig::new(8, 2, 2.0).unwrap()),
            Err(PreprocessError::TileGridTooLarge { .. })
        ));
    }

    #[test]
    fn clip_below_uniform_height_rejected() {
        assert!(ClaheConfig::new(2, 2, 0.5).is_err());
        assert!(ClaheConfig::new(0, 2, 2.0).is_err());
    }

    #[test]
    fn output_stays_in_range_and_is_monotone_per_tile() {
        let p = PlaneF32::from_fn(48, 40, |x, y| ((x * 37 + y * 91) % 256) as f32);
        let out = clahe(&p, &ClaheConfig::new(1, 1, 3.0).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        let mut pairs: Vec<(f32, f32)> = p.data().iter().copied().zip(out.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
