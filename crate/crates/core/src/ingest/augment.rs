//! Seeded image augmentation.
//!
//! Each call draws its parameters from a generator seeded by
//! `(spec.seed, image_id, index)`, so one augmented copy per source image
//! is reproducible byte-for-byte.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::ImageRef;

use super::IngestError;

/// Degenerate crops are redrawn this many times before giving up.
pub const MAX_CROP_ATTEMPTS: usize = 8;

/// Closed interval `[lo, hi]`; `lo == hi` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // always consume a draw so the stream layout does not depend on the spec
        let u: f64 = rng.random();
        if self.lo == self.hi {
            self.lo
        } else {
            (self.lo + u * (self.hi - self.lo)).clamp(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Fraction of width and height removed by the random crop.
    pub crop_fraction: Range,
    /// Degrees, counter-clockwise.
    pub rotation: Range,
    pub grayscale_prob: f64,
    /// Degrees on the hue wheel.
    pub hue_shift: Range,
    /// Relative brightness change; the pixel factor is `1 + value`.
    pub brightness: Range,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_fraction: Range::new(0.0, 0.20),
            rotation: Range::new(-15.0, 15.0),
            grayscale_prob: 0.15,
            hue_shift: Range::new(-24.0, 24.0),
            brightness: Range::new(-0.19, 0.19),
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// No-op transforms.
    pub fn identity(seed: u64) -> Self {
        Self {
            crop_fraction: Range::fixed(0.0),
            rotation: Range::fixed(0.0),
            grayscale_prob: 0.0,
            hue_shift: Range::fixed(0.0),
            brightness: Range::fixed(0.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let check = |name: &str, r: &Range, lo: f64, hi: f64| {
            if r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi && r.lo >= lo && r.hi <= hi {
                Ok(())
            } else {
                Err(IngestError::Augment(format!("{name} range [{}, {}] must lie in [{lo}, {hi}]", r.lo, r.hi)))
            }
        };
        check("crop_fraction", &self.crop_fraction, 0.0, 0.95)?;
        check("rotation", &self.rotation, -180.0, 180.0)?;
        check("hue_shift", &self.hue_shift, -180.0, 180.0)?;
        check("brightness", &self.brightness, -1.0, 1.0)?;
        if !(0.0..=1.0).contains(&self.grayscale_prob) {
            return Err(IngestError::Augment(format!("grayscale_prob {} outside [0, 1]", self.grayscale_prob)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| IngestError::Augment(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Concrete transform for one augmented copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub crop_fraction: f64,
    /// Position of the crop window within the slack, each in `[0, 1]`.
    pub crop_x: f64,
    pub crop_y: f64,
    pub rotation: f64,
    pub grayscale: bool,
    pub hue_shift: f64,
    pub brightness: f64,
}

impl AugmentParams {
    pub fn within(&self, spec: &AugmentationSpec) -> bool {
        spec.crop_fraction.contains(self.crop_fraction)
            && (0.0..=1.0).contains(&self.crop_x)
            && (0.0..=1.0).contains(&self.crop_y)
            && spec.rotation.contains(self.rotation)
            && spec.hue_shift.contains(self.hue_shift)
            && spec.brightness.contains(self.brightness)
            && (spec.grayscale_prob > 0.0 || !self.grayscale)
    }
}

pub fn param_rng(seed: u64, image_id: &str, index: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    h.update(index.to_le_bytes());
    let mut s = [0u8; 32];
    s.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(s)
}

fn draw_crop(spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (spec.crop_fraction.sample(rng), rng.random(), rng.random())
}

fn draw(spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> AugmentParams {
    let (crop_fraction, crop_x, crop_y) = draw_crop(spec, rng);
    let rotation = spec.rotation.sample(rng);
    let g: f64 = rng.random();
    let hue_shift = spec.hue_shift.sample(rng);
    let brightness = spec.brightness.sample(rng);
    let p = AugmentParams {
        crop_fraction,
        crop_x,
        crop_y,
        rotation,
        grayscale: g < spec.grayscale_prob,
        hue_shift,
        brightness,
    };
    assert!(p.within(spec), "sampled {p:?} outside {spec:?}");
    p
}

/// Parameters for augmented copy `index` of `image_id`.
pub fn sample_params(spec: &AugmentationSpec, image_id: &str, index: u32) -> AugmentParams {
    draw(spec, &mut param_rng(spec.seed, image_id, index))
}

fn crop_window(w: u32, h: u32, p: &AugmentParams) -> Option<(u32, u32, u32, u32)> {
    let cw = (w as f64 * (1.0 - p.crop_fraction)).floor() as u32;
    let ch = (h as f64 * (1.0 - p.crop_fraction)).floor() as u32;
    if cw == 0 || ch == 0 {
        return None;
    }
    let x = ((w - cw) as f64 * p.crop_x).round() as u32;
    let y = ((h - ch) as f64 * p.crop_y).round() as u32;
    Some((x.min(w - cw), y.min(h - ch), cw, ch))
}

/// Augmented copy `index` of `image`, plus the parameters used.
pub fn augment(image: &ImageRef, spec: &AugmentationSpec, index: u32) -> Result<(RgbImage, AugmentParams), IngestError> {
    spec.validate()?;
    let pixels = image.load().map_err(|e| IngestError::Augment(e.to_string()))?;
    let mut rng = param_rng(spec.seed, &image.id, index);
    let mut params = draw(spec, &mut rng);
    let (w, h) = pixels.dimensions();
    let mut window = crop_window(w, h, &params);
    let mut attempts = 1;
    while window.is_none() {
        if attempts >= MAX_CROP_ATTEMPTS {
            return Err(IngestError::DegenerateCrop {
                image_id: image.id.clone(),
                attempts,
            });
        }
        let (f, x, y) = draw_crop(spec, &mut rng);
        params.crop_fraction = f;
        params.crop_x = x;
        params.crop_y = y;
        window = crop_window(w, h, &params);
        attempts += 1;
    }
    Ok((apply(&pixels, &params, window.expect("window found")), params))
}

/// Applies `p` to `img`. Parameters at their neutral values leave pixels untouched.
pub fn apply(img: &RgbImage, p: &AugmentParams, window: (u32, u32, u32, u32)) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = if window == (0, 0, w, h) {
        img.clone()
    } else {
        let cropped = image::imageops::crop_imm(img, window.0, window.1, window.2, window.3).to_image();
        image::imageops::resize(&cropped, w, h, image::imageops::FilterType::Triangle)
    };
    if p.rotation != 0.0 {
        out = rotate(&out, p.rotation);
    }
    if p.hue_shift != 0.0 {
        for px in out.pixels_mut() {
            *px = shift_hue(*px, p.hue_shift);
        }
    }
    if p.brightness != 0.0 {
        let f = 1.0 + p.brightness;
        for px in out.pixels_mut() {
            for c in px.0.iter_mut() {
                *c = (*c as f64 * f).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if p.grayscale {
        for px in out.pixels_mut() {
            let [r, g, b] = px.0;
            let y = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8;
            *px = Rgb([y, y, y]);
        }
    }
    out
}

/// Rotation about the centre, same canvas, bilinear, black fill.
fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    RgbImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // inverse map; y grows downward, so this turns the content counter-clockwise
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        bilinear(img, sx, sy)
    })
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        return Rgb([0, 0, 0]);
    }
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let p = |xx, yy| img.get_pixel(xx, yy)[ch] as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

fn shift_hue(px: Rgb<u8>, degrees: f64) -> Rgb<u8> {
    let [r, g, b] = px.0.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return px;
    }
    let mut hue = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    hue = (hue + degrees).rem_euclid(360.0);
    let (s, v) = (d / max, max);
    let c = v * s;
    let x = c * (1.0 - ((hue / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r1, g1, b1) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    Rgb([r1, g1, b1].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8))
}

/// Augments and re-encodes in the source's container format (PNG for raw pixels).
pub fn augment_encoded(
    image: &ImageRef,
    spec: &AugmentationSpec,
    index: u32,
) -> Result<(Vec<u8>, ImageFormat, AugmentParams), IngestError> {
    let (out, params) = augment(image, spec, index)?;
    let format = match image.format() {
        Some(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => f,
        _ => ImageFormat::Png,
    };
    let mut bytes = Vec::new();
    out.write_to(&mut Cursor::new(&mut bytes), format)
        .map_err(|e| IngestError::Augment(format!("{}: {e}", image.id)))?;
    Ok((bytes, format, params))
}

/// One entry of an augmented training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedItem {
    pub image_id: String,
    /// `None` for the original, `Some(i)` for augmented copy `i`.
    pub augmented: Option<u32>,
}

/// Every original followed by one augmented copy: `n` items become `2n`.
pub fn doubling_plan<S: AsRef<str>>(ids: &[S]) -> Vec<PlannedItem> {
    ids.iter()
        .flat_map(|id| {
            let id = id.as_ref().to_string();
            [
                PlannedItem {
                    image_id: id.clone(),
                    augmented: None,
                },
                PlannedItem {
                    image_id: id,
                    augmented: Some(0),
                },
            ]
        })
        .collect()
}
