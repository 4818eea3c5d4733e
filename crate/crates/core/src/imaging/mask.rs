use serde::{Deserialize, Serialize};

use super::{check_same_dims, ImagingError};

/// Axis-aligned pixel rectangle `(x, y, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &PixelBox) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) as u64 * (y1 - y0) as u64
        }
    }

    /// Box IoU; two empty boxes compare as identical.
    pub fn iou(&self, other: &PixelBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// One boolean per pixel, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != width as usize * height as usize {
            return Err(ImagingError::InvalidDimensions {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Like [`get`](Self::get) but out-of-range coordinates read as clear.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn zip_with(
        &self,
        other: &BinaryMask,
        op: impl Fn(bool, bool) -> bool,
    ) -> Result<BinaryMask, ImagingError> {
        check_same_dims(self.dims(), other.dims())?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| op(a, b))
            .collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, ImagingError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, ImagingError> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Pixels of `self` that are not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask, ImagingError> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// `area(self ∩ other)` without materializing the intersection.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize, ImagingError> {
        check_same_dims(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let w = self.width as usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0 != usize::MAX).then(|| PixelBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }

    /// Coordinates of set pixels in raster order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Encodes set pixels as white on black, 8-bit grayscale PNG.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let buf: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, buf)
            .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_plane(w: u32, h: u32, from_col: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, _| x >= from_col)
    }

    #[test]
    fn area_examples() {
        assert_eq!(BinaryMask::new(10, 10).area(), 0);
        assert_eq!(BinaryMask::full(10, 10).area(), 100);
    }

    #[test]
    fn intersection_examples() {
        let a = half_plane(10, 10, 5);
        assert_eq!(a.intersection(&a).unwrap(), a);
        let empty = BinaryMask::new(10, 10);
        assert_eq!(a.intersection(&empty).unwrap(), empty);

        // Columns 5..10 vs 7..10: per-pixel enumeration gives 3 columns x 10 rows.
        let b = half_plane(10, 10, 7);
        let mut expected = 0;
        for y in 0..10 {
            for x in 0..10 {
                if a.get(x, y) && b.get(x, y) {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 30);
        assert_eq!(a.intersection(&b).unwrap().area(), expected);
        assert_eq!(a.intersection_area(&b).unwrap(), expected);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let a = BinaryMask::new(4, 4);
        let b = BinaryMask::new(4, 5);
        assert!(matches!(
            a.intersection(&b),
            Err(ImagingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bounding_box_is_tight() {
        let mut m = BinaryMask::new(8, 8);
        assert_eq!(m.bounding_box(), None);
        m.set(2, 3, true);
        m.set(5, 4, true);
        assert_eq!(
            m.bounding_box(),
            Some(PixelBox {
                x: 2,
                y: 3,
                w: 4,
                h: 2
            })
        );
    }

    #[test]
    fn box_iou() {
        let a = PixelBox { x: 0, y: 0, w: 10, h: 10 };
        let b = PixelBox { x: 5, y: 0, w: 10, h: 10 };
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }
}
