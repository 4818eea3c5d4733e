//! Integer HSV with half-degree hue.
//!
//! Convention: `h` in `[0, 180)` (degrees / 2), `s` and `v` in `[0, 255]`.
//! All divisions round half up, so the conversion is bit-exact across
//! platforms and languages.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, ImageRgb, ImagingError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelHsv {
    pub h: u8,
    pub s: u8,
    pub v: u8,
}

/// `round(num / den)` with ties rounded up, for `den > 0` and `num >= 0`.
#[inline]
fn div_round_half_up(num: u32, den: u32) -> u32 {
    (2 * num + den) / (2 * den)
}

/// Hexcone RGB to HSV conversion.
///
/// `v = max`, `s = round(255 * (max - min) / max)`, and `h` is the hexcone
/// hue in degrees halved and rounded, wrapped into `[0, 180)`. Achromatic
/// pixels have `h == 0` and `s == 0`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> PixelHsv {
    let [r, g, b] = rgb.map(u32::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if max == 0 || delta == 0 {
        return PixelHsv {
            h: 0,
            s: 0,
            v: max as u8,
        };
    }
    let s = div_round_half_up(255 * delta, max);

    // Half-degree hue as numerator / delta, kept non-negative:
    //   red sector    30 * (g - b) / delta   (+180 when negative)
    //   green sector  60 + 30 * (b - r) / delta
    //   blue sector   120 + 30 * (r - g) / delta
    let num = if max == r {
        if g >= b {
            30 * (g - b)
        } else {
            180 * delta - 30 * (b - g)
        }
    } else if max == g {
        if b >= r {
            60 * delta + 30 * (b - r)
        } else {
            60 * delta - 30 * (r - b)
        }
    } else if r >= g {
        120 * delta + 30 * (r - g)
    } else {
        120 * delta - 30 * (g - r)
    };
    let h = div_round_half_up(num, delta) % 180;
    PixelHsv {
        h: h as u8,
        s: s as u8,
        v: max as u8,
    }
}

/// Inclusive componentwise HSV bounds. Hue bounds may reach 180 so that a
/// full range `[0,0,0]..=[180,255,255]` accepts every pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRange", into = "RawRange")]
pub struct HsvRange {
    lower: [u8; 3],
    upper: [u8; 3],
}

#[derive(Serialize, Deserialize)]
struct RawRange {
    lower: [u8; 3],
    upper: [u8; 3],
}

impl TryFrom<RawRange> for HsvRange {
    type Error = ImagingError;
    fn try_from(raw: RawRange) -> Result<Self, Self::Error> {
        HsvRange::new(raw.lower, raw.upper)
    }
}

impl From<HsvRange> for RawRange {
    fn from(r: HsvRange) -> Self {
        RawRange {
            lower: r.lower,
            upper: r.upper,
        }
    }
}

impl HsvRange {
    pub fn new(lower: [u8; 3], upper: [u8; 3]) -> Result<Self, ImagingError> {
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(ImagingError::InvalidRange { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub const FULL: HsvRange = HsvRange {
        lower: [0, 0, 0],
        upper: [180, 255, 255],
    };

    /// Fluorescent green (CD61): `[35, 100, v_x]..=[85, 255, 255]`.
    pub fn green(v_x: u8) -> Self {
        Self {
            lower: [35, 100, v_x],
            upper: [85, 255, 255],
        }
    }

    /// Fluorescent yellow (CD45): `[20, 100, v_x]..=[40, 255, 255]`.
    pub fn yellow(v_x: u8) -> Self {
        Self {
            lower: [20, 100, v_x],
            upper: [40, 255, 255],
        }
    }

    pub fn lower(&self) -> [u8; 3] {
        self.lower
    }

    pub fn upper(&self) -> [u8; 3] {
        self.upper
    }

    #[inline]
    pub fn contains(&self, p: PixelHsv) -> bool {
        let c = [p.h, p.s, p.v];
        (0..3).all(|i| self.lower[i] <= c[i] && c[i] <= self.upper[i])
    }
}

pub fn threshold_hsv(img: &ImageRgb, range: &HsvRange) -> BinaryMask {
    let bits = img
        .pixels()
        .map(|p| range.contains(rgb_to_hsv(p)))
        .collect();
    BinaryMask::from_bits(img.width(), img.height(), bits)
        .expect("one bit per pixel")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hsv(h: u8, s: u8, v: u8) -> PixelHsv {
        PixelHsv { h, s, v }
    }

    #[test]
    fn primary_and_achromatic_colors() {
        assert_eq!(rgb_to_hsv([0, 255, 0]), hsv(60, 255, 255));
        assert_eq!(rgb_to_hsv([255, 255, 0]), hsv(30, 255, 255));
        assert_eq!(rgb_to_hsv([173, 173, 173]), hsv(0, 0, 173));
        assert_eq!(rgb_to_hsv([255, 0, 0]), hsv(0, 255, 255));
        assert_eq!(rgb_to_hsv([0, 0, 255]), hsv(120, 255, 255));
        assert_eq!(rgb_to_hsv([0, 0, 0]), hsv(0, 0, 0));
    }

    #[test]
    fn hue_near_360_wraps_to_zero() {
        // 359.x degrees rounds to 180 half-degrees, which wraps to 0.
        let p = rgb_to_hsv([255, 0, 1]);
        assert_eq!(p.h, 0);
        let q = rgb_to_hsv([255, 0, 5]);
        assert_eq!(q.h, 179);
    }

    #[test]
    fn threshold_examples() {
        let green = HsvRange::green(140);
        let img = ImageRgb::filled(8, 6, [0, 255, 0]);
        assert_eq!(threshold_hsv(&img, &green).area(), 48);

        let gray = ImageRgb::filled(8, 6, [173, 173, 173]);
        assert_eq!(threshold_hsv(&gray, &green).area(), 0);

        // (0,120,0) is hsv (60,255,120): below the brightness bound.
        assert_eq!(rgb_to_hsv([0, 120, 0]), hsv(60, 255, 120));
        let dim = ImageRgb::filled(4, 4, [0, 120, 0]);
        assert_eq!(threshold_hsv(&dim, &green).area(), 0);
    }

    #[test]
    fn full_range_accepts_everything() {
        let img = ImageRgb::from_fn(16, 16, |x, y| [(x * 16) as u8, (y * 16) as u8, 77]);
        assert_eq!(threshold_hsv(&img, &HsvRange::FULL).area(), 256);
    }

    #[test]
    fn inverted_range_is_rejected() {
        assert!(HsvRange::new([50, 0, 0], [40, 255, 255]).is_err());
        let json = r#"{"lower":[0,0,200],"upper":[180,255,100]}"#;
        assert!(serde_json::from_str::<HsvRange>(json).is_err());
    }
}
