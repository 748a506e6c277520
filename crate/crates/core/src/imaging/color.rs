//! Conversions between 8-bit sRGB and the four analysis colour spaces.
//!
//! Conventions: CIELab uses sRGB primaries, D65 white and the 2° observer;
//! YCbCr is full-range BT.601 with chroma centred on 128; HSV reports
//! H in degrees `[0, 360)` and S, V in `[0, 1]`. The RGB "conversion" is a
//! pass-through to float planes in `0..=255`.

use serde::{Deserialize, Serialize};

use super::{ImageRgb8, ImagingError, PlaneF32};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpaceId {
    Rgb,
    #[serde(rename = "cielab")]
    CieLab,
    #[serde(rename = "ycbcr")]
    YCbCr,
    Hsv,
}

impl ColorSpaceId {
    pub const ALL: [ColorSpaceId; 4] = [Self::Rgb, Self::CieLab, Self::YCbCr, Self::Hsv];

    pub fn channel_names(self) -> [&'static str; 3] {
        match self {
            Self::Rgb => ["r", "g", "b"],
            Self::CieLab => ["lab_l", "lab_a", "lab_b"],
            Self::YCbCr => ["y", "cb", "cr"],
            Self::Hsv => ["h", "s", "v"],
        }
    }
}

// sRGB (D65) linear RGB -> XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// Reference white is the image of linear (1,1,1) so sRGB white lands exactly on L=100, a=b=0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const EPSILON_DELTA: f64 = 6.0 / 29.0;

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = RGB_TO_XYZ;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv = |a: f64| a / det;
    [
        [
            inv(m[1][1] * m[2][2] - m[1][2] * m[2][1]),
            inv(m[0][2] * m[2][1] - m[0][1] * m[2][2]),
            inv(m[0][1] * m[1][2] - m[0][2] * m[1][1]),
        ],
        [
            inv(m[1][2] * m[2][0] - m[1][0] * m[2][2]),
            inv(m[0][0] * m[2][2] - m[0][2] * m[2][0]),
            inv(m[0][2] * m[1][0] - m[0][0] * m[1][2]),
        ],
        [
            inv(m[1][0] * m[2][1] - m[1][1] * m[2][0]),
            inv(m[0][1] * m[2][0] - m[0][0] * m[2][1]),
            inv(m[0][0] * m[1][1] - m[0][1] * m[1][0]),
        ],
    ]
}

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON_DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * EPSILON_DELTA * EPSILON_DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > EPSILON_DELTA {
        t * t * t
    } else {
        3.0 * EPSILON_DELTA * EPSILON_DELTA * (t - 4.0 / 29.0)
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

// linearised value of every 8-bit code
fn linear_lut() -> &'static [f64; 256] {
    static LUT: std::sync::OnceLock<[f64; 256]> = std::sync::OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| srgb_to_linear(i as f64 / 255.0)))
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = linear_lut();
    let lin = rgb.map(|c| lut[c as usize]);
    let xyz = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab to 8-bit sRGB; out-of-gamut colours are clamped per channel.
pub fn lab_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    let m = xyz_to_rgb_matrix();
    let mut out = [0u8; 3];
    for (o, row) in out.iter_mut().zip(m.iter()) {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        *o = to_u8(linear_to_srgb(lin.clamp(0.0, 1.0)) * 255.0);
    }
    out
}

pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(f64::from);
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn ycbcr_to_rgb(ycc: [f64; 3]) -> [u8; 3] {
    let [y, cb, cr] = ycc;
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [
        to_u8(y + 1.402 * cr),
        to_u8(y - 0.344_136 * cb - 0.714_136 * cr),
        to_u8(y + 1.772 * cb),
    ]
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [if h >= 360.0 { h - 360.0 } else { h }, s, max]
}

fn hsv_to_rgb(hsv: [f64; 3]) -> [u8; 3] {
    let h = hsv[0].rem_euclid(360.0);
    let s = hsv[1].clamp(0.0, 1.0);
    let v = hsv[2].clamp(0.0, 1.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| to_u8((ch + m) * 255.0))
}

fn convert_pixel(rgb: [u8; 3], target: ColorSpaceId) -> [f64; 3] {
    match target {
        ColorSpaceId::Rgb => rgb.map(f64::from),
        ColorSpaceId::CieLab => rgb_to_lab(rgb),
        ColorSpaceId::YCbCr => rgb_to_ycbcr(rgb),
        ColorSpaceId::Hsv => rgb_to_hsv(rgb),
    }
}

fn convert_pixel_back(v: [f64; 3], source: ColorSpaceId) -> [u8; 3] {
    match source {
        ColorSpaceId::Rgb => v.map(to_u8),
        ColorSpaceId::CieLab => lab_to_rgb(v),
        ColorSpaceId::YCbCr => ycbcr_to_rgb(v),
        ColorSpaceId::Hsv => hsv_to_rgb(v),
    }
}

/// Splits an image into three float planes in the `target` colour space.
pub fn convert_color(img: &ImageRgb8, target: ColorSpaceId) -> [PlaneF32; 3] {
    let (w, h) = (img.width(), img.height());
    let rows = par::map_range(h, |y| {
        let mut row = [Vec::with_capacity(w), Vec::with_capacity(w), Vec::with_capacity(w)];
        for x in 0..w {
            let v = convert_pixel(img.pixel(x, y), target);
            for c in 0..3 {
                row[c].push(v[c] as f32);
            }
        }
        row
    });
    let mut planes = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for row in rows {
        for (p, r) in planes.iter_mut().zip(row) {
            p.extend(r);
        }
    }
    planes.map(|data| PlaneF32 { width: w, height: h, data })
}

/// Reassembles an 8-bit image from three planes in the `source` colour space.
pub fn convert_back(planes: &[PlaneF32; 3], source: ColorSpaceId) -> Result<ImageRgb8, ImagingError> {
    let (w, h) = (planes[0].width(), planes[0].height());
    if !planes[0].same_shape(&planes[1]) || !planes[0].same_shape(&planes[2]) {
        return Err(ImagingError::DimensionMismatch(format!(
            "{}x{}, {}x{}, {}x{}",
            w,
            h,
            planes[1].width(),
            planes[1].height(),
            planes[2].width(),
            planes[2].height()
        )));
    }
    let rows = par::map_range(h, |y| {
        let mut row = Vec::with_capacity(w * 3);
        for x in 0..w {
            let i = y * w + x;
            let v = [
                planes[0].data()[i] as f64,
                planes[1].data()[i] as f64,
                planes[2].data()[i] as f64,
            ];
            row.extend_from_slice(&convert_pixel_back(v, source));
        }
        row
    });
    ImageRgb8::new(w, h, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rgb: [u8; 3], space: ColorSpaceId) -> [f32; 3] {
        let p = convert_color(&ImageRgb8::filled(1, 1, rgb), space);
        [p[0].data()[0], p[1].data()[0], p[2].data()[0]]
    }

    #[test]
    fn white_is_lab_100() {
        let lab = one([255, 255, 255], ColorSpaceId::CieLab);
        assert!((lab[0] - 100.0).abs() < 0.01);
        assert!(lab[1].abs() < 0.01 && lab[2].abs() < 0.01);
    }

    #[test]
    fn pure_red_lab() {
        // Reference values from the textbook sRGB -> XYZ -> Lab chain.
        let lab = one([255, 0, 0], ColorSpaceId::CieLab);
        assert!((lab[0] - 53.24).abs() < 0.1, "{lab:?}");
        assert!((lab[1] - 80.09).abs() < 0.1, "{lab:?}");
        assert!((lab[2] - 67.20).abs() < 0.1, "{lab:?}");
    }

    #[test]
    fn gray_has_no_saturation() {
        let hsv = one([128, 128, 128], ColorSpaceId::Hsv);
        assert_eq!(hsv[1], 0.0);
        assert!((hsv[2] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn grays_are_achromatic_everywhere() {
        for v in 0..=255u8 {
            let lab = one([v, v, v], ColorSpaceId::CieLab);
            assert!(lab[1].abs() < 0.01 && lab[2].abs() < 0.01, "{v}: {lab:?}");
            let ycc = one([v, v, v], ColorSpaceId::YCbCr);
            assert!((ycc[1] - 128.0).abs() < 0.5 && (ycc[2] - 128.0).abs() < 0.5);
            assert_eq!(one([v, v, v], ColorSpaceId::Hsv)[1], 0.0);
        }
    }

    #[test]
    fn lab_white_and_ycbcr_black_go_back() {
        let lab = [
            PlaneF32::filled(1, 1, 100.0),
            PlaneF32::filled(1, 1, 0.0),
            PlaneF32::filled(1, 1, 0.0),
        ];
        assert_eq!(convert_back(&lab, ColorSpaceId::CieLab).unwrap().pixel(0, 0), [255, 255, 255]);
        let ycc = [
            PlaneF32::filled(1, 1, 0.0),
            PlaneF32::filled(1, 1, 128.0),
            PlaneF32::filled(1, 1, 128.0),
        ];
        assert_eq!(convert_back(&ycc, ColorSpaceId::YCbCr).unwrap().pixel(0, 0), [0, 0, 0]);
    }

    #[test]
    fn mismatched_planes_rejected() {
        let planes = [
            PlaneF32::filled(2, 2, 0.0),
            PlaneF32::filled(2, 2, 0.0),
            PlaneF32::filled(3, 2, 0.0),
        ];
        assert!(matches!(
            convert_back(&planes, ColorSpaceId::Hsv),
            Err(ImagingError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn hue_wraps_below_360() {
        let hsv = rgb_to_hsv([255, 0, 1]);
        assert!(hsv[0] < 360.0 && hsv[0] > 359.0);
    }
}
