use super::ImageRgb;

/// Integer luma, `round((299 R + 587 G + 114 B) / 1000)`.
pub fn grayscale(img: &ImageRgb) -> Vec<u8> {
    img.pixels()
        .map(|[r, g, b]| {
            let y = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
            ((y + 500) / 1000) as u8
        })
        .collect()
}

/// Result of Otsu's method: pixels `<= threshold` form the low class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuSplit {
    pub threshold: u8,
    pub between_variance: f64,
    pub mean_low: f64,
    pub mean_high: f64,
}

/// Otsu's threshold over 8-bit values. Returns `None` when the values
/// cannot be split (empty input or a single distinct value).
pub fn otsu_threshold(values: &[u8]) -> Option<OtsuSplit> {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<OtsuSplit> = None;
    let (mut w_low, mut sum_low) = (0.0, 0.0);
    for (t, &count) in hist.iter().enumerate().take(255) {
        w_low += count as f64;
        sum_low += t as f64 * count as f64;
        let w_high = total - w_low;
        if w_low == 0.0 || w_high == 0.0 {
            continue;
        }
        let mean_low = sum_low / w_low;
        let mean_high = (sum_all - sum_low) / w_high;
        let between = w_low * w_high * (mean_low - mean_high).powi(2) / (total * total);
        // Strict comparison keeps the lowest threshold among ties.
        if best.is_none_or(|b| between > b.between_variance) {
            best = Some(OtsuSplit {
                threshold: t as u8,
                between_variance: between,
                mean_low,
                mean_high,
            });
        }
    }
    best
}
