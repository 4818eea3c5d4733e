use serde::{Deserialize, Serialize};

use super::{BinaryMask, ImagingError};

/// Closed polygon in normalized image coordinates (`[0, 1]` on both axes).
///
/// Self-intersection is allowed; filling uses the even-odd rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolygon", into = "RawPolygon")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RawPolygon {
    points: Vec<[f64; 2]>,
}

impl TryFrom<RawPolygon> for Polygon {
    type Error = ImagingError;
    fn try_from(raw: RawPolygon) -> Result<Self, Self::Error> {
        Polygon::new(raw.points)
    }
}

impl From<Polygon> for RawPolygon {
    fn from(p: Polygon) -> Self {
        RawPolygon { points: p.vertices }
    }
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, ImagingError> {
        if vertices.len() < 3 {
            return Err(ImagingError::DegeneratePolygon(vertices.len()));
        }
        for &[x, y] in &vertices {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(ImagingError::CoordinateOutOfRange { x, y });
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area in normalized units.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }
}

/// Even-odd scanline fill sampled at pixel centers.
///
/// Pixel `(i, j)` is set when its center `(i + 0.5, j + 0.5)` (in pixel
/// units) lies inside the polygon. Centers that fall exactly on an edge
/// follow a half-open rule: the left and top boundaries are inside, the
/// right and bottom boundaries are outside.
pub fn rasterize_polygon(poly: &Polygon, width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let pts: Vec<(f64, f64)> = poly
        .vertices()
        .iter()
        .map(|&[x, y]| (x * width as f64, y * height as f64))
        .collect();
    let n = pts.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            // Half-open in y: an edge covers yc when exactly one endpoint
            // is at or above it. Horizontal edges never cross.
            if (y0 <= yc) != (y1 <= yc) {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // Columns whose center satisfies a <= i + 0.5 < b.
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(width as f64);
            let mut col = start;
            while col < end {
                mask.set(col as u32, row, true);
                col += 1.0;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers_inside_oracle(poly: &Polygon, w: u32, h: u32) -> usize {
        // Independent even-odd test: cast a ray toward +x from each center.
        let v = poly.vertices();
        let mut count = 0;
        for j in 0..h {
            for i in 0..w {
                let px = (i as f64 + 0.5) / w as f64;
                let py = (j as f64 + 0.5) / h as f64;
                let mut inside = false;
                for k in 0..v.len() {
                    let [ax, ay] = v[k];
                    let [bx, by] = v[(k + 1) % v.len()];
                    if (ay > py) != (by > py) {
                        let xi = ax + (py - ay) / (by - ay) * (bx - ax);
                        if px < xi {
                            inside = !inside;
                        }
                    }
                }
                count += inside as usize;
            }
        }
        count
    }

    #[test]
    fn full_cover_square() {
        let sq = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(rasterize_polygon(&sq, 4, 4).area(), 16);
    }

    #[test]
    fn centered_square_on_4x4() {
        let sq = Polygon::new(vec![[0.25, 0.25], [0.75, 0.25], [0.75, 0.75], [0.25, 0.75]])
            .unwrap();
        let m = rasterize_polygon(&sq, 4, 4);
        assert_eq!(m.area(), centers_inside_oracle(&sq, 4, 4));
        assert_eq!(m.area(), 4);
        assert!(m.get(1, 1) && m.get(2, 2) && !m.get(0, 0) && !m.get(3, 3));
    }

    #[test]
    fn triangle_area_close_to_half() {
        let tri = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let m = rasterize_polygon(&tri, 100, 100);
        let oracle = centers_inside_oracle(&tri, 100, 100);
        assert!((m.area() as f64 - 5000.0).abs() <= 100.0, "area {}", m.area());
        assert!((m.area() as i64 - oracle as i64).abs() <= 100);
        assert!((tri.area() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        assert!(matches!(
            Polygon::new(vec![[0.0, 0.0], [1.0, 1.0]]),
            Err(ImagingError::DegeneratePolygon(2))
        ));
        assert!(matches!(
            Polygon::new(vec![[0.0, 0.0], [1.2, 0.0], [0.0, 1.0]]),
            Err(ImagingError::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn self_intersecting_bowtie_uses_even_odd() {
        let bowtie =
            Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        // 20x17 keeps every pixel center off the diagonals.
        let m = rasterize_polygon(&bowtie, 20, 17);
        assert_eq!(m.area(), centers_inside_oracle(&bowtie, 20, 17));
        // Left and right lobes are filled, top and bottom wedges are not.
        assert!(m.get(2, 8) && m.get(17, 8));
        assert!(!m.get(10, 2) && !m.get(10, 15));
    }

    #[test]
    fn polygon_json_shape() {
        let p = Polygon::new(vec![[0.0, 0.0], [0.5, 0.0], [0.5, 0.5]]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"points":[[0.0,0.0],[0.5,0.0],[0.5,0.5]]}"#);
        let back: Polygon = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Polygon>(r#"{"points":[[0,0],[1,1]]}"#).is_err());
    }
}
