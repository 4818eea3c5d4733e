use super::BinaryMask;

/// Offsets of the discrete disc of the given radius: all `(dx, dy)` with
/// `dx² + dy² <= r(r + 1)`, i.e. strictly inside a circle of radius
/// `r + 0.5`. Radius 1 is the full 3x3 neighbourhood.
pub fn disc_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let limit = r * (r + 1);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= limit {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Binary erosion. Offsets that fall outside the image are ignored, so the
/// border behaves as foreground and a full mask stays full.
pub fn erode(m: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let offsets = disc_offsets(radius);
    let (w, h) = (m.width() as i64, m.height() as i64);
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        m.get(x, y)
            && offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx < 0 || ny < 0 || nx >= w || ny >= h || m.get(nx as u32, ny as u32)
            })
    })
}

/// Binary dilation with the disc structuring element.
pub fn dilate(m: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let offsets = disc_offsets(radius);
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        m.get(x, y)
            || offsets
                .iter()
                .any(|&(dx, dy)| m.get_signed(x as i64 + dx, y as i64 + dy))
    })
}

/// Opening: erosion followed by dilation. Removes features that no disc of
/// the given radius fits into; radius 0 is the identity.
pub fn morphological_open(m: &BinaryMask, radius: u32) -> BinaryMask {
    dilate(&erode(m, radius), radius)
}
