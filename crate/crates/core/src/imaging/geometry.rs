use serde::{Deserialize, Serialize};

use super::{ImageRgb8, ImagingError};

/// Row-major 2×3 matrix mapping input pixel coordinates to output coordinates:
/// `x' = m[0]·x + m[1]·y + m[2]`, `y' = m[3]·x + m[4]·y + m[5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine2x3(pub [f64; 6]);

impl Affine2x3 {
    pub const IDENTITY: Affine2x3 = Affine2x3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine2x3([1.0, 0.0, dx, 0.0, 1.0, dy])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * m[4] - m[1] * m[3]
    }

    pub fn inverse(&self) -> Result<Affine2x3, ImagingError> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(ImagingError::SingularAffine(det));
        }
        let [a, b, tx, c, d, ty] = self.0;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Affine2x3([ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)]))
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricOp {
    FlipH,
    FlipV,
    /// Quarter turn clockwise; output is `height × width`.
    Rot90,
    Affine(Affine2x3),
}

pub fn transform_geometric(img: &ImageRgb8, op: &GeometricOp) -> Result<ImageRgb8, ImagingError> {
    let (w, h) = (img.width(), img.height());
    Ok(match op {
        GeometricOp::FlipH => ImageRgb8::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y)),
        GeometricOp::FlipV => ImageRgb8::from_fn(w, h, |x, y| img.pixel(x, h - 1 - y)),
        GeometricOp::Rot90 => ImageRgb8::from_fn(h, w, |x, y| img.pixel(y, h - 1 - x)),
        GeometricOp::Affine(m) => {
            let inv = m.inverse()?;
            ImageRgb8::from_fn(w, h, |x, y| {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                bilinear(img, sx, sy)
            })
        }
    })
}

/// Bilinear sample with edge clamping.
fn bilinear(img: &ImageRgb8, x: f64, y: f64) -> [u8; 3] {
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = (1.0 - fx) * (1.0 - fy) * p00[c] as f64
            + fx * (1.0 - fy) * p10[c] as f64
            + (1.0 - fx) * fy * p01[c] as f64
            + fx * fy * p11[c] as f64;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}
