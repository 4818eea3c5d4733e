use std::collections::VecDeque;

use serde::Serialize;

use super::{BinaryMask, PixelBox};

/// One 8-connected foreground region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Region {
    pub id: u32,
    pub area: usize,
    pub bbox: PixelBox,
}

/// Label image (0 = background, ids dense from 1) plus per-region stats.
#[derive(Clone, Debug)]
pub struct Components {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    regions: Vec<Region>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| l == id).collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("label image dims")
    }
}

const NEIGHBOURS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// 8-connected labeling. Ids are assigned in raster-scan order of each
/// region's first pixel.
pub fn connected_components(m: &BinaryMask) -> Components {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let mut labels = vec![0u32; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !m.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = regions.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut area = 0;
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for (dx, dy) in NEIGHBOURS_8 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if m.bits()[q] && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        regions.push(Region {
            id,
            area,
            bbox: PixelBox {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            },
        });
    }
    Components {
        width: m.width(),
        height: m.height(),
        labels,
        regions,
    }
}
