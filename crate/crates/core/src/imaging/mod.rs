//! Pixel-level primitives shared by every pipeline stage.
//!
//! Everything here is a pure function over immutable values: RGB images,
//! integer HSV pixels, binary masks and normalized polygons.

mod components;
mod contour;
mod hsv;
mod image;
mod mask;
mod morphology;
mod polygon;
mod threshold;

pub use self::components::{connected_components, Components, Region};
pub use self::contour::mask_to_polygons;
pub use self::hsv::{rgb_to_hsv, threshold_hsv, HsvRange, PixelHsv};
pub use self::image::ImageRgb;
pub use self::mask::{BinaryMask, PixelBox};
pub use self::morphology::{dilate, disc_offsets, erode, morphological_open};
pub use self::polygon::{rasterize_polygon, Polygon};
pub use self::threshold::{grayscale, otsu_threshold, OtsuSplit};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("invalid image dimensions {width}x{height} for {len} bytes")]
    InvalidDimensions { width: u32, height: u32, len: usize },
    #[error("degenerate polygon: {0} vertices, need at least 3")]
    DegeneratePolygon(usize),
    #[error("polygon coordinate ({x}, {y}) outside [0, 1]")]
    CoordinateOutOfRange { x: f64, y: f64 },
    #[error("HSV range lower bound {lower:?} exceeds upper bound {upper:?}")]
    InvalidRange { lower: [u8; 3], upper: [u8; 3] },
    #[error("image i/o: {0}")]
    Image(#[from] ::image::ImageError),
}

pub(crate) fn check_same_dims(
    a: (u32, u32),
    b: (u32, u32),
) -> Result<(), ImagingError> {
    if a != b {
        return Err(ImagingError::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        });
    }
    Ok(())
}
