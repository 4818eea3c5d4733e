//! Box-prompted mask proposals.

use ccc_core::imaging::{mask_to_polygons, ImageRgb, Polygon};
use ccc_core::inference::ClassicalSegmenter;

use crate::task::BoxPrompt;

/// Turns a box prompt into a polygon in normalized full-image coordinates.
pub trait Proposer: Send + Sync {
    /// `None` when nothing was found inside the box.
    fn propose(&self, img: &ImageRgb, prompt: &BoxPrompt) -> Option<Polygon>;
}

/// Classical segmentation restricted to the box: threshold the crop, keep
/// the largest component, trace its outline.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassicalProposer {
    pub segmenter: ClassicalSegmenter,
}

impl Proposer for ClassicalProposer {
    fn propose(&self, img: &ImageRgb, prompt: &BoxPrompt) -> Option<Polygon> {
        let (x, y, w, h) = (prompt.x as u32, prompt.y as u32, prompt.w as u32, prompt.h as u32);
        let crop = img.crop(x, y, w, h);
        let largest = self
            .segmenter
            .instances(&crop)
            .into_iter()
            .max_by_key(|inst| inst.mask.area())?;
        let outline = mask_to_polygons(&largest.mask).into_iter().next()?;
        let (iw, ih) = (img.width() as f64, img.height() as f64);
        let vertices = outline
            .vertices()
            .iter()
            .map(|&[u, v]| [(x as f64 + u * w as f64) / iw, (y as f64 + v * h as f64) / ih])
            .collect();
        Polygon::new(vertices).ok()
    }
}
