//! Outer-contour extraction.
//!
//! Each 8-connected component is traced along the pixel-corner lattice with
//! the component kept on the right-hand side (clockwise on screen). The
//! resulting polygon runs along the outside edges of the boundary pixels, so
//! rasterizing it with center sampling reproduces the component exactly,
//! holes excepted.

use super::{connected_components, Components, Polygon, Region};

type Dir = (i64, i64);

const EAST: Dir = (1, 0);

/// Left-hand turn of `d` in image coordinates (y grows downward).
#[inline]
fn left_of(d: Dir) -> Dir {
    (d.1, -d.0)
}

#[inline]
fn right_of(d: Dir) -> Dir {
    (-d.1, d.0)
}

/// Pixel adjacent to lattice point `p`, in the quadrant `d + side`.
#[inline]
fn pixel_towards(p: (i64, i64), d: Dir, side: Dir) -> (i64, i64) {
    let step = |v: i64| if v > 0 { 0 } else { -1 };
    (p.0 + step(d.0 + side.0), p.1 + step(d.1 + side.1))
}

/// One polygon per connected component, in component-id order.
pub fn mask_to_polygons(m: &super::BinaryMask) -> Vec<Polygon> {
    let cc = connected_components(m);
    cc.regions()
        .iter()
        .map(|r| trace_outer(&cc, r, m.width(), m.height()))
        .collect()
}

fn trace_outer(cc: &Components, region: &Region, width: u32, height: u32) -> Polygon {
    let (w, h) = (width as i64, height as i64);
    let inside = |(x, y): (i64, i64)| {
        x >= 0 && y >= 0 && x < w && y < h && cc.label(x as u32, y as u32) == region.id
    };

    // The first pixel in raster order has background above and to its left,
    // so its top-left corner is a convex vertex of the outer boundary.
    let y0 = region.bbox.y as i64;
    let x0 = (region.bbox.x as i64..region.bbox.right() as i64)
        .find(|&x| inside((x, y0)))
        .expect("region has a pixel on its top row");
    let start = (x0, y0);

    let mut vertices = vec![start];
    let mut pos = start;
    let mut dir = EAST;
    let limit = 4 * (w + 1) * (h + 1) + 8;
    for _ in 0..limit {
        pos = (pos.0 + dir.0, pos.1 + dir.1);
        // Checking the ahead-left pixel first keeps diagonal neighbours
        // inside the contour (8-connectivity).
        let next = if inside(pixel_towards(pos, dir, left_of(dir))) {
            left_of(dir)
        } else if inside(pixel_towards(pos, dir, right_of(dir))) {
            dir
        } else {
            right_of(dir)
        };
        if pos == start && next == EAST {
            break;
        }
        if next != dir {
            vertices.push(pos);
        }
        dir = next;
    }

    let pts = vertices
        .into_iter()
        .map(|(x, y)| [x as f64 / width as f64, y as f64 / height as f64])
        .collect();
    Polygon::new(pts).expect("a traced contour has at least four corners inside the image")
}
