//! Image standardization (gray padding to a square, bilinear resize) and
//! seeded stochastic augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::ImageRgb;
use crate::seeds::derive_seed;

/// Gray used to pad the shorter side.
pub const PAD_GRAY: [u8; 3] = [173, 173, 173];

/// Side length of standardized classifier inputs.
pub const STANDARD_SIZE: u32 = 224;

/// Number of augmented copies emitted per training image.
pub const EXPANSION_FACTOR: usize = 5;

#[inline]
fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Pads the shorter side with `fill` so the result is `S x S`,
/// `S = max(w, h)`. The original content is centered; when the padding total
/// is odd the extra row or column goes to the bottom or right.
pub fn pad_to_square(img: &ImageRgb, fill: [u8; 3]) -> ImageRgb {
    let (w, h) = img.dims();
    let side = w.max(h);
    if w == h {
        return img.clone();
    }
    let left = (side - w) / 2;
    let top = (side - h) / 2;
    ImageRgb::from_fn(side, side, |x, y| {
        if x >= left && x < left + w && y >= top && y < top + h {
            img.pixel(x - left, y - top)
        } else {
            fill
        }
    })
}

/// Source coordinate and blend weight along one axis, half-pixel aligned.
fn sample_axis(out: u32, out_len: u32, in_len: u32) -> (u32, u32, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as u32;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize with half-pixel-center alignment and clamped borders.
/// Same-size requests return an identical copy.
pub fn resize_bilinear(img: &ImageRgb, width: u32, height: u32) -> ImageRgb {
    assert!(width > 0 && height > 0, "target dimensions must be non-zero");
    if img.dims() == (width, height) {
        return img.clone();
    }
    let xs: Vec<_> = (0..width)
        .map(|x| sample_axis(x, width, img.width()))
        .collect();
    let ys: Vec<_> = (0..height)
        .map(|y| sample_axis(y, height, img.height()))
        .collect();
    ImageRgb::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x as usize];
        let (y0, y1, fy) = ys[y as usize];
        let p00 = img.pixel(x0, y0);
        let p10 = img.pixel(x1, y0);
        let p01 = img.pixel(x0, y1);
        let p11 = img.pixel(x1, y1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = round_u8(top * (1.0 - fy) + bottom * fy);
        }
        out
    })
}

/// Gray-pad to square, then bilinear-resize to `size x size`.
pub fn standardize(img: &ImageRgb, size: u32, fill: [u8; 3]) -> ImageRgb {
    resize_bilinear(&pad_to_square(img, fill), size, size)
}

/// Bounds for each random transform plus the seed they are drawn from.
///
/// Defaults: resized-crop scale 0.8–1.0, full-turn rotation, both flips,
/// brightness/contrast/saturation jitter of ±20 %, hue jitter of ±10
/// half-degrees, and blur sigma 0.1–2.0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Area fraction of the crop window, `(min, max)` within `(0, 1]`.
    pub crop_scale: (f64, f64),
    /// Rotation range in degrees, within `[0, 360)`.
    pub rotation: (f64, f64),
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue shift in half-degrees.
    pub hue: f64,
    pub blur_sigma: (f64, f64),
    /// Fill for regions rotated in from outside the frame.
    pub fill: [u8; 3],
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_scale: (0.8, 1.0),
            rotation: (0.0, 360.0),
            hflip: true,
            vflip: true,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 10.0,
            blur_sigma: (0.1, 2.0),
            fill: PAD_GRAY,
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// Parameters under which [`augment`] is the identity.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            rotation: (0.0, 0.0),
            hflip: false,
            vflip: false,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            blur_sigma: (0.0, 0.0),
            fill: PAD_GRAY,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Concrete transform values drawn deterministically from `seed`.
    pub fn draw(&self) -> AugmentDraw {
        fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }
        fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
            if amount > 0.0 {
                rng.random_range(1.0 - amount..1.0 + amount)
            } else {
                1.0
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Every draw consumes randomness in a fixed order so one disabled
        // transform never shifts the values of the others.
        let crop_scale = uniform(&mut rng, self.crop_scale);
        let crop_x: f64 = rng.random();
        let crop_y: f64 = rng.random();
        let rotation = uniform(&mut rng, self.rotation) % 360.0;
        let hflip = rng.random_bool(0.5) && self.hflip;
        let vflip = rng.random_bool(0.5) && self.vflip;
        let brightness = jitter(&mut rng, self.brightness);
        let contrast = jitter(&mut rng, self.contrast);
        let saturation = jitter(&mut rng, self.saturation);
        let hue = if self.hue > 0.0 {
            rng.random_range(-self.hue..self.hue)
        } else {
            0.0
        };
        let blur_sigma = uniform(&mut rng, self.blur_sigma);
        AugmentDraw {
            crop_scale,
            crop_x,
            crop_y,
            rotation,
            hflip,
            vflip,
            brightness,
            contrast,
            saturation,
            hue,
            blur_sigma,
            fill: self.fill,
        }
    }
}

/// One concrete set of transform values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub crop_scale: f64,
    pub crop_x: f64,
    pub crop_y: f64,
    pub rotation: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub blur_sigma: f64,
    pub fill: [u8; 3],
}

/// Draws from `params.seed` and applies crop, rotate, flip, color jitter and
/// blur, in that order. Output dimensions equal input dimensions.
pub fn augment(img: &ImageRgb, params: &AugmentParams) -> ImageRgb {
    apply_draw(img, &params.draw())
}

pub fn apply_draw(img: &ImageRgb, d: &AugmentDraw) -> ImageRgb {
    let mut out = resized_crop(img, d.crop_scale, d.crop_x, d.crop_y);
    if d.rotation != 0.0 {
        out = rotate(&out, d.rotation, d.fill);
    }
    if d.hflip || d.vflip {
        out = flip(&out, d.hflip, d.vflip);
    }
    out = color_jitter(&out, d.brightness, d.contrast, d.saturation, d.hue);
    if d.blur_sigma > 0.0 {
        out = gaussian_blur(&out, d.blur_sigma);
    }
    out
}

/// Crops a window covering `scale` of the area (same aspect ratio), placed
/// by the offset fractions, and resizes it back to the input size.
pub fn resized_crop(img: &ImageRgb, scale: f64, fx: f64, fy: f64) -> ImageRgb {
    let (w, h) = img.dims();
    let side = scale.clamp(0.0, 1.0).sqrt();
    let cw = ((w as f64 * side).round() as u32).clamp(1, w);
    let ch = ((h as f64 * side).round() as u32).clamp(1, h);
    if (cw, ch) == (w, h) {
        return img.clone();
    }
    let x = ((w - cw) as f64 * fx.clamp(0.0, 1.0)).floor() as u32;
    let y = ((h - ch) as f64 * fy.clamp(0.0, 1.0)).floor() as u32;
    resize_bilinear(&img.crop(x, y, cw, ch), w, h)
}

/// Rotates about the image center by `degrees` (counter-clockwise on
/// screen), bilinear sampling, `fill` outside the source frame.
pub fn rotate(img: &ImageRgb, degrees: f64, fill: [u8; 3]) -> ImageRgb {
    let (w, h) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill.map(f64::from)
        } else {
            img.pixel(x as u32, y as u32).map(f64::from)
        }
    };
    ImageRgb::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        // Inverse mapping: rotate the output position back into the source.
        let sx = cos * dx - sin * dy + cx - 0.5;
        let sy = sin * dx + cos * dy + cy - 0.5;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (ax, ay) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p00 = fetch(x0, y0);
        let p10 = fetch(x0 + 1, y0);
        let p01 = fetch(x0, y0 + 1);
        let p11 = fetch(x0 + 1, y0 + 1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - ax) + p10[c] * ax;
            let bottom = p01[c] * (1.0 - ax) + p11[c] * ax;
            out[c] = round_u8(top * (1.0 - ay) + bottom * ay);
        }
        out
    })
}

pub fn flip(img: &ImageRgb, horizontal: bool, vertical: bool) -> ImageRgb {
    let (w, h) = img.dims();
    ImageRgb::from_fn(w, h, |x, y| {
        let sx = if horizontal { w - 1 - x } else { x };
        let sy = if vertical { h - 1 - y } else { y };
        img.pixel(sx, sy)
    })
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv_f(p: [f64; 3]) -> [f64; 3] {
    let max = p[0].max(p[1]).max(p[2]);
    let min = p[0].min(p[1]).min(p[2]);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == p[0] {
        ((p[1] - p[2]) / d).rem_euclid(6.0)
    } else if max == p[1] {
        (p[2] - p[0]) / d + 2.0
    } else {
        (p[0] - p[1]) / d + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h * 60.0, s, max]
}

fn hsv_to_rgb_f([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Brightness, contrast and saturation are multiplicative factors (1.0 is
/// neutral); `hue` is an additive shift in half-degrees.
pub fn color_jitter(
    img: &ImageRgb,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
) -> ImageRgb {
    if brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0 {
        return img.clone();
    }
    let mut px: Vec<[f64; 3]> = img.pixels().map(|p| p.map(f64::from)).collect();
    if brightness != 1.0 {
        for p in &mut px {
            *p = p.map(|c| (c * brightness).clamp(0.0, 255.0));
        }
    }
    if contrast != 1.0 {
        let mean = px.iter().map(|&p| luma(p)).sum::<f64>() / px.len() as f64;
        for p in &mut px {
            *p = p.map(|c| ((c - mean) * contrast + mean).clamp(0.0, 255.0));
        }
    }
    if saturation != 1.0 {
        for p in &mut px {
            let g = luma(*p);
            *p = p.map(|c| (g + (c - g) * saturation).clamp(0.0, 255.0));
        }
    }
    if hue != 0.0 {
        for p in &mut px {
            let mut hsv = rgb_to_hsv_f(*p);
            hsv[0] += hue * 2.0;
            *p = hsv_to_rgb_f(hsv);
        }
    }
    let data = px.into_iter().flat_map(|p| p.map(round_u8)).collect();
    ImageRgb::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Normalized Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &ImageRgb, sigma: f64) -> ImageRgb {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src: Vec<[f64; 3]> = img.pixels().map(|p| p.map(f64::from)).collect();
    let at = |x: i64, y: i64| (y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize;

    let mut tmp = vec![[0.0; 3]; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, kv) in kernel.iter().enumerate() {
                let p = src[at(x + i as i64 - r, y)];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    ImageRgb::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0.0; 3];
        for (i, kv) in kernel.iter().enumerate() {
            let p = tmp[at(x as i64, y as i64 + i as i64 - r)];
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc.map(round_u8)
    })
}

/// One augmented copy of a source image.
#[derive(Clone, Debug)]
pub struct AugmentedImage {
    pub source_id: String,
    pub variant: usize,
    pub seed: u64,
    pub image: ImageRgb,
}

impl AugmentedImage {
    pub fn id(&self) -> String {
        format!("{}_aug{}", self.source_id, self.variant)
    }
}

/// Seeds of the five variants of `id`: `base_seed + stable_hash(id, k)`.
pub fn variant_seeds(id: &str, base_seed: u64) -> [u64; EXPANSION_FACTOR] {
    std::array::from_fn(|k| derive_seed(base_seed, id, k as u64))
}

/// Emits five augmented variants per input. Seeds depend only on the image
/// id and variant index, so the result is independent of scheduling.
pub fn expand_fivefold(
    items: &[(String, ImageRgb)],
    params: &AugmentParams,
    base_seed: u64,
) -> Vec<AugmentedImage> {
    items
        .par_iter()
        .flat_map_iter(|(id, img)| {
            variant_seeds(id, base_seed)
                .into_iter()
                .enumerate()
                .map(move |(k, seed)| AugmentedImage {
                    source_id: id.clone(),
                    variant: k,
                    seed,
                    image: augment(img, &params.clone().with_seed(seed)),
                })
        })
        .collect()
}
