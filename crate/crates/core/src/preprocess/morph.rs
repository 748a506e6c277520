//! Binary morphology. Out-of-image neighbours are ignored, which keeps erosion
//! and dilation adjoint on the bounded raster (so opening and closing stay
//! idempotent).

use serde::{Deserialize, Serialize};

use super::RegionMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Erode,
    Dilate,
    /// Erode then dilate.
    Open,
    /// Dilate then erode.
    Close,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuringElement {
    Cross3,
    Square3,
}

impl StructuringElement {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Self::Cross3 => &[(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)],
            Self::Square3 => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (0, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

fn apply(mask: &RegionMask, se: StructuringElement, erode: bool) -> RegionMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    RegionMask::from_fn(mask.width(), mask.height(), |x, y| {
        let mut inside = se.offsets().iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as usize, ny as usize))
        });
        if erode {
            inside.all(|b| b)
        } else {
            inside.any(|b| b)
        }
    })
}

pub fn morph(mask: &RegionMask, op: MorphOp, se: StructuringElement) -> RegionMask {
    match op {
        MorphOp::Erode => apply(mask, se, true),
        MorphOp::Dilate => apply(mask, se, false),
        MorphOp::Open => apply(&apply(mask, se, true), se, false),
        MorphOp::Close => apply(&apply(mask, se, false), se, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn opening_removes_speckle() {
        let mut m = RegionMask::empty(9, 9);
        m.set(4, 4, true);
        assert!(morph(&m, MorphOp::Open, StructuringElement::Square3).is_empty());
    }

    #[test]
    fn opening_keeps_large_solid() {
        let m = RegionMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        assert_eq!(morph(&m, MorphOp::Open, StructuringElement::Square3), m);
    }

    #[test]
    fn closing_bridges_one_pixel_gap() {
        // 5x5: bars in columns 1 and 3 (rows 0..5), gap at column 2.
        // Dilation covers columns 0..=4 entirely; erosion of the full raster with
        // out-of-image neighbours ignored keeps everything, so columns 1..=3 are
        // set and the gap is filled.
        let m = RegionMask::from_fn(5, 5, |x, _| x == 1 || x == 3);
        let c = morph(&m, MorphOp::Close, StructuringElement::Square3);
        for y in 0..5 {
            assert!(c.get(2, y), "gap not filled at row {y}");
            assert!(c.get(1, y) && c.get(3, y));
        }
    }

    #[test]
    fn cross_erodes_corners_less() {
        let m = RegionMask::from_fn(7, 7, |x, y| (1..6).contains(&x) && (1..6).contains(&y));
        let cross = morph(&m, MorphOp::Erode, StructuringElement::Cross3);
        let square = morph(&m, MorphOp::Erode, StructuringElement::Square3);
        assert_eq!(square.count(), 9);
        assert_eq!(cross.count(), 9);
        let d = morph(&m, MorphOp::Dilate, StructuringElement::Cross3);
        assert!(!d.get(0, 0) && d.get(0, 1));
    }

    fn random_mask() -> impl Strategy<Value = RegionMask> {
        (3usize..14, 3usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |bits| RegionMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn open_and_close_are_idempotent(m in random_mask(), square in any::<bool>()) {
            let se = if square { StructuringElement::Square3 } else { StructuringElement::Cross3 };
            let o = morph(&m, MorphOp::Open, se);
            prop_assert_eq!(morph(&o, MorphOp::Open, se), o);
            let c = morph(&m, MorphOp::Close, se);
            prop_assert_eq!(morph(&c, MorphOp::Close, se), c);
        }
    }
}
