use serde::{Deserialize, Serialize};

/// Per-patient affine correction `calibrated = gain · raw + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub gain: f64,
    pub offset: f64,
    pub n_points: usize,
}

pub const GAIN_LIMITS: (f64, f64) = (0.25, 4.0);

impl Default for CalibrationParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl CalibrationParams {
    pub const IDENTITY: CalibrationParams = CalibrationParams { gain: 1.0, offset: 0.0, n_points: 0 };

    pub fn apply(&self, raw_hb: f64) -> f64 {
        self.gain * raw_hb + self.offset
    }
}

/// Fits the calibration line from `(raw prediction, lab Hb)` pairs.
///
/// Two or more points give a least-squares line with the gain clamped to
/// [`GAIN_LIMITS`] (the offset is refit for the clamped gain). One point, or
/// points whose raw values coincide, give an offset-only correction. No
/// points give the identity.
pub fn fit_calibration(history: &[(f64, f64)]) -> CalibrationParams {
    let n = history.len();
    if n == 0 {
        return CalibrationParams::IDENTITY;
    }
    let nf = n as f64;
    let mx = history.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = history.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = history.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = history.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let gain = if n >= 2 && sxx > 1e-12 {
        (sxy / sxx).clamp(GAIN_LIMITS.0, GAIN_LIMITS.1)
    } else {
        1.0
    };
    CalibrationParams { gain, offset: my - gain * mx, n_points: n }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = fit_calibration(&[(10.0, 10.0), (12.0, 12.0)]);
        assert_eq!((c.gain, c.offset, c.n_points), (1.0, 0.0, 2));
        // slope (1·1 + 1·1)/(1 + 1) = 1, offset 12 − 11 = 1
        let c = fit_calibration(&[(10.0, 11.0), (12.0, 13.0)]);
        assert_eq!((c.gain, c.offset), (1.0, 1.0));
        assert_eq!(fit_calibration(&[]), CalibrationParams::IDENTITY);
    }

    #[test]
    fn single_point_is_offset_only() {
        let c = fit_calibration(&[(9.5, 11.0)]);
        assert_eq!((c.gain, c.offset, c.n_points), (1.0, 1.5, 1));
    }

    #[test]
    fn gain_is_clamped() {
        let c = fit_calibration(&[(10.0, 0.0), (10.1, 10.0)]);
        assert_eq!(c.gain, 4.0);
        let c = fit_calibration(&[(10.0, 10.0), (12.0, 9.0)]);
        assert_eq!(c.gain, 0.25);
    }

    #[test]
    fn identity_is_identity() {
        for raw in [0.0, 7.25, 13.0, 19.9] {
            assert_eq!(CalibrationParams::IDENTITY.apply(raw), raw);
        }
    }
}
