//! Image handles and socket region cropping.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{ImageFormat, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use crate::vision::BBox;

use super::PipelineError;

/// Where an image's pixels come from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    Path(PathBuf),
    Encoded(Arc<[u8]>),
    Pixels(Arc<RgbImage>),
}

#[derive(Debug, Clone)]
pub struct ImageRef {
    pub id: String,
    pub source: ImageSource,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    /// Reads only the header to learn the dimensions.
    pub fn from_path(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let id = id.into();
        let path = path.as_ref();
        let (width, height) = ImageReader::open(path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| PipelineError::image(&id, e))?
            .into_dimensions()
            .map_err(|e| PipelineError::image(&id, e))?;
        Self::checked(id, ImageSource::Path(path.to_path_buf()), width, height)
    }

    pub fn from_bytes(id: impl Into<String>, bytes: impl Into<Arc<[u8]>>) -> Result<Self, PipelineError> {
        let id = id.into();
        let bytes: Arc<[u8]> = bytes.into();
        let (width, height) = ImageReader::new(std::io::Cursor::new(&bytes[..]))
            .with_guessed_format()
            .map_err(|e| PipelineError::image(&id, e))?
            .into_dimensions()
            .map_err(|e| PipelineError::image(&id, e))?;
        Self::checked(id, ImageSource::Encoded(bytes), width, height)
    }

    pub fn from_pixels(id: impl Into<String>, pixels: RgbImage) -> Result<Self, PipelineError> {
        let (width, height) = pixels.dimensions();
        Self::checked(id.into(), ImageSource::Pixels(Arc::new(pixels)), width, height)
    }

    fn checked(id: String, source: ImageSource, width: u32, height: u32) -> Result<Self, PipelineError> {
        if width == 0 || height == 0 {
            return Err(PipelineError::Image {
                image_id: id,
                message: "zero-sized image".into(),
            });
        }
        Ok(Self {
            id,
            source,
            width,
            height,
        })
    }

    /// Decodes to RGB8.
    pub fn load(&self) -> Result<Arc<RgbImage>, PipelineError> {
        let decoded = match &self.source {
            ImageSource::Pixels(p) => return Ok(Arc::clone(p)),
            ImageSource::Path(path) => ImageReader::open(path)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| PipelineError::image(&self.id, e))?
                .decode(),
            ImageSource::Encoded(bytes) => ImageReader::new(std::io::Cursor::new(&bytes[..]))
                .with_guessed_format()
                .map_err(|e| PipelineError::image(&self.id, e))?
                .decode(),
        };
        Ok(Arc::new(decoded.map_err(|e| PipelineError::image(&self.id, e))?.to_rgb8()))
    }

    /// Container format of the source, if it is encoded.
    pub fn format(&self) -> Option<ImageFormat> {
        match &self.source {
            ImageSource::Pixels(_) => None,
            ImageSource::Path(path) => ImageFormat::from_path(path).ok(),
            ImageSource::Encoded(bytes) => image::guess_format(bytes).ok(),
        }
    }
}

/// Integer pixel rectangle, `x..x+width`, `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Box grown by `pad_fraction` of its width/height on each side and snapped
/// outward to whole pixels, before clamping. Returns `(x0, y0, x1, y1)`.
pub fn padded_bounds(bbox: &BBox, pad_fraction: f64) -> (i64, i64, i64, i64) {
    let dx = bbox.width() * pad_fraction;
    let dy = bbox.height() * pad_fraction;
    // Snap away tiny float noise so 130 * 1.2 stays 156, not 157.
    let snap = |v: f64| (v * 1e9).round() / 1e9;
    (
        snap(bbox.x_min - dx).floor() as i64,
        snap(bbox.y_min - dy).floor() as i64,
        snap(bbox.x_max + dx).ceil() as i64,
        snap(bbox.y_max + dy).ceil() as i64,
    )
}

/// Padded crop rectangle clamped to the image.
pub fn crop_rect(width: u32, height: u32, bbox: &BBox, pad_fraction: f64) -> Result<PixelRect, PipelineError> {
    if !(pad_fraction >= 0.0 && pad_fraction.is_finite()) {
        return Err(PipelineError::Config(format!("crop pad fraction {pad_fraction} must be >= 0")));
    }
    let (x0, y0, x1, y1) = padded_bounds(bbox, pad_fraction);
    let x0 = x0.clamp(0, width as i64);
    let x1 = x1.clamp(0, width as i64);
    let y0 = y0.clamp(0, height as i64);
    let y1 = y1.clamp(0, height as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(PipelineError::EmptyCrop(*bbox));
    }
    Ok(PixelRect {
        x: x0 as u32,
        y: y0 as u32,
        width: (x1 - x0) as u32,
        height: (y1 - y0) as u32,
    })
}

pub fn crop_pixels(pixels: &RgbImage, rect: PixelRect) -> RgbImage {
    image::imageops::crop_imm(pixels, rect.x, rect.y, rect.width, rect.height).to_image()
}

/// Crops the padded, clamped socket region out of `image`.
pub fn crop(image: &ImageRef, bbox: &BBox, pad_fraction: f64) -> Result<RgbImage, PipelineError> {
    let rect = crop_rect(image.width, image.height, bbox, pad_fraction)?;
    let pixels = image.load()?;
    Ok(crop_pixels(&pixels, rect))
}

/// A socket region handed to a classifier backend.
#[derive(Debug, Clone)]
pub struct Crop {
    pub image_id: String,
    /// Detector box the crop was cut from, in source-image pixels.
    pub source_bbox: BBox,
    pub rect: PixelRect,
    pub pixels: RgbImage,
}
