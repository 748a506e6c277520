use super::{PreprocessError, RegionMask};
use crate::imaging::ImageRgb8;

pub const DEFAULT_TARGET_WHITE: f64 = 230.0;
pub const GAIN_RANGE: (f64, f64) = (0.5, 2.0);

/// Per-channel gains `target / mean(sclera)`, clamped to [`GAIN_RANGE`].
pub fn illumination_gains(img: &ImageRgb8, sclera: &RegionMask, target_white: f64) -> Result<[f64; 3], PreprocessError> {
    sclera.check_shape(img.width(), img.height())?;
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for (p, &inside) in img.pixels().zip(sclera.bits()) {
        if inside {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(PreprocessError::NoReference);
    }
    Ok(sum.map(|s| {
        let mean = s / n as f64;
        if mean <= 0.0 {
            GAIN_RANGE.1
        } else {
            (target_white / mean).clamp(GAIN_RANGE.0, GAIN_RANGE.1)
        }
    }))
}

/// White-balances the whole image against the sclera reference region.
pub fn correct_illumination(img: &ImageRgb8, sclera: &RegionMask, target_white: f64) -> Result<ImageRgb8, PreprocessError> {
    let gains = illumination_gains(img, sclera, target_white)?;
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            [0, 1, 2].map(|c| (p[c] as f64 * gains[c]).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    Ok(ImageRgb8::new(img.width(), img.height(), data).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_sclera(sclera_rgb: [u8; 3]) -> (ImageRgb8, RegionMask) {
        let img = ImageRgb8::from_fn(10, 10, |x, _| if x < 5 { sclera_rgb } else { [120, 60, 50] });
        let mask = RegionMask::from_fn(10, 10, |x, _| x < 5);
        (img, mask)
    }

    #[test]
    fn unit_gains_leave_image_alone() {
        let (img, mask) = with_sclera([230, 230, 230]);
        assert_eq!(correct_illumination(&img, &mask, 230.0).unwrap(), img);
    }

    #[test]
    fn gains_follow_channel_means() {
        let (img, mask) = with_sclera([200, 180, 160]);
        let g = illumination_gains(&img, &mask, 216.0).unwrap();
        for (got, want) in g.iter().zip([1.08, 1.2, 1.35]) {
            assert!((got - want).abs() < 1e-12, "{g:?}");
        }
        let out = correct_illumination(&img, &mask, 216.0).unwrap();
        assert_eq!(out.pixel(0, 0), [216, 216, 216]);
        assert_eq!(out.pixel(9, 0), [130, 72, 68]);
    }

    #[test]
    fn dark_sclera_clamps_gain() {
        let (img, mask) = with_sclera([50, 50, 50]);
        assert_eq!(illumination_gains(&img, &mask, 230.0).unwrap(), [2.0; 3]);
    }

    #[test]
    fn empty_sclera_is_reported() {
        let (img, _) = with_sclera([50, 50, 50]);
        assert_eq!(
            correct_illumination(&img, &RegionMask::empty(10, 10), 230.0),
            Err(PreprocessError::NoReference)
        );
    }
}
