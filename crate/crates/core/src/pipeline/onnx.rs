//! ONNX model backends (cargo feature `onnx`).
//!
//! Detector: one `[1, 3, S, S]` float input in `[0, 1]`; output
//! `[1, 4 + 2, N]` or `[1, N, 4 + 2]` with rows `cx, cy, w, h, score_na,
//! score_socket` in input pixels. Non-maximum suppression is left to the
//! pipeline.
//!
//! Classifier: one `[1, 3, S, S]` float input in `[0, 1]`; output `[1, 13]`
//! logits or probabilities in class-index order.

use super::backend::{BackendConfig, ClassifierBackend, DetectorBackend};
use super::PipelineError;

pub const DEFAULT_DETECTOR_INPUT: u32 = 640;
pub const DEFAULT_CLASSIFIER_INPUT: u32 = 224;
/// Detector rows scoring below this are discarded at decode time.
pub const MIN_DECODE_SCORE: f32 = 0.001;

#[cfg(feature = "onnx")]
pub use self::tract_impl::{OnnxClassifier, OnnxDetector};

pub fn load_detector(cfg: &BackendConfig) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    #[cfg(feature = "onnx")]
    {
        Ok(Box::new(OnnxDetector::load(cfg)?))
    }
    #[cfg(not(feature = "onnx"))]
    {
        Err(unsupported(cfg))
    }
}

pub fn load_classifier(cfg: &BackendConfig) -> Result<Box<dyn ClassifierBackend>, PipelineError> {
    #[cfg(feature = "onnx")]
    {
        Ok(Box::new(OnnxClassifier::load(cfg)?))
    }
    #[cfg(not(feature = "onnx"))]
    {
        Err(unsupported(cfg))
    }
}

#[cfg(not(feature = "onnx"))]
fn unsupported(cfg: &BackendConfig) -> PipelineError {
    PipelineError::Config(format!(
        "{}: this build has no ONNX runtime (rebuild with --features onnx)",
        cfg.model_path.display()
    ))
}

/// Resizes to `size x size` and lays out as planar RGB scaled to `[0, 1]`.
pub fn to_planar(pixels: &image::RgbImage, size: u32) -> Vec<f32> {
    let resized = image::imageops::resize(pixels, size, size, image::imageops::FilterType::Triangle);
    let plane = (size * size) as usize;
    let mut out = vec![0f32; 3 * plane];
    for (i, p) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = p[c] as f32 / 255.0;
        }
    }
    out
}

/// Decodes YOLO-style rows into boxes in source-image pixels.
///
/// `rows` holds `n` rows of `cx, cy, w, h, s0, s1`. Boxes are clamped to the
/// image and dropped if empty.
pub fn decode_rows(
    image_id: &str,
    rows: &[[f32; 6]],
    scale_x: f64,
    scale_y: f64,
    width: u32,
    height: u32,
) -> Vec<crate::vision::PredictionBox> {
    use crate::taxonomy::DetClass;
    use crate::vision::{BBox, PredictionBox};

    let mut out = Vec::new();
    for r in rows {
        let (cls, score) = if r[5] > r[4] {
            (DetClass::Socket, r[5])
        } else {
            (DetClass::NaSwitchboard, r[4])
        };
        if !score.is_finite() || score < MIN_DECODE_SCORE {
            continue;
        }
        let cx = r[0] as f64 * scale_x;
        let cy = r[1] as f64 * scale_y;
        let hw = r[2] as f64 * scale_x / 2.0;
        let hh = r[3] as f64 * scale_y / 2.0;
        let Ok(raw) = BBox::new((cx - hw).max(0.0), (cy - hh).max(0.0), cx + hw, cy + hh) else {
            continue;
        };
        let Some(bbox) = raw.clamp_to(width as f64, height as f64) else {
            continue;
        };
        let confidence = (score as f64).clamp(0.0, 1.0);
        if let Ok(p) = PredictionBox::new(image_id.to_string(), cls, bbox, confidence) {
            out.push(p);
        }
    }
    out
}

#[cfg(feature = "onnx")]
mod tract_impl {
    use std::path::Path;

    use image::RgbImage;
    use sha2::{Digest, Sha256};
    use tract_onnx::prelude::*;

    use super::super::backend::{
        BackendConfig, BackendDescriptor, BackendError, ClassProbs, ClassifierBackend, DetectorBackend,
    };
    use super::super::image::{Crop, ImageRef};
    use super::super::PipelineError;
    use super::*;
    use crate::taxonomy::ClfClass;
    use crate::vision::PredictionBox;

    type Plan = TypedRunnableModel<TypedModel>;

    fn compile(path: &Path, size: u32) -> Result<(Plan, String), PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let digest = hex::encode(Sha256::digest(&bytes))[..12].to_string();
        let plan = tract_onnx::onnx()
            .model_for_read(&mut std::io::Cursor::new(&bytes))
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, size as usize, size as usize]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| PipelineError::Config(format!("{}: {e:#}", path.display())))?;
        Ok((plan, digest))
    }

    fn infer(plan: &Plan, pixels: &RgbImage, size: u32) -> Result<Tensor, BackendError> {
        let s = size as usize;
        let input = Tensor::from_shape(&[1, 3, s, s], &to_planar(pixels, size)).map_err(|e| BackendError::new(format!("{e:#}")))?;
        let mut out = plan
            .run(tvec!(input.into()))
            .map_err(|e| BackendError::new(format!("inference failed: {e:#}")))?;
        if out.is_empty() {
            return Err(BackendError::new("model produced no outputs"));
        }
        Ok(out.remove(0).into_tensor())
    }

    pub struct OnnxDetector {
        plan: Plan,
        size: u32,
        name: String,
        digest: String,
        single_flight: bool,
    }

    impl OnnxDetector {
        pub fn load(cfg: &BackendConfig) -> Result<Self, PipelineError> {
            let size = cfg.input_size.unwrap_or(DEFAULT_DETECTOR_INPUT);
            let (plan, digest) = compile(&cfg.model_path, size)?;
            Ok(Self {
                plan,
                size,
                name: model_name(&cfg.model_path),
                digest,
                single_flight: cfg.single_flight,
            })
        }
    }

    fn model_name(p: &Path) -> String {
        p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "onnx".into())
    }

    impl DetectorBackend for OnnxDetector {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor {
                name: format!("onnx-detector:{}", self.name),
                version: format!("sha256-{}", self.digest),
            }
        }

        fn probe(&self) -> Result<(), BackendError> {
            let blank = RgbImage::new(self.size, self.size);
            self.rows(&blank).map(|_| ())
        }

        fn detect(&self, image: &ImageRef, pixels: &RgbImage) -> Result<Vec<PredictionBox>, BackendError> {
            let rows = self.rows(pixels)?;
            let sx = image.width as f64 / self.size as f64;
            let sy = image.height as f64 / self.size as f64;
            Ok(decode_rows(&image.id, &rows, sx, sy, image.width, image.height))
        }

        fn single_flight(&self) -> bool {
            self.single_flight
        }
    }

    impl OnnxDetector {
        fn rows(&self, pixels: &RgbImage) -> Result<Vec<[f32; 6]>, BackendError> {
            let out = infer(&self.plan, pixels, self.size)?;
            let view = out
                .to_array_view::<f32>()
                .map_err(|e| BackendError::new(format!("detector output: {e:#}")))?;
            let shape = view.shape().to_vec();
            let (n, channels_first) = match shape.as_slice() {
                [1, 6, n] => (*n, true),
                [1, n, 6] => (*n, false),
                other => {
                    return Err(BackendError::new(format!(
                        "detector output shape {other:?}, expected [1, 6, N] or [1, N, 6]"
                    )))
                }
            };
            let view = view.into_shape_with_order(if channels_first { vec![6, n] } else { vec![n, 6] }).map_err(|e| BackendError::new(e.to_string()))?;
            Ok((0..n)
                .map(|i| std::array::from_fn(|c| if channels_first { view[[c, i]] } else { view[[i, c]] }))
                .collect())
        }
    }

    pub struct OnnxClassifier {
        plan: Plan,
        size: u32,
        name: String,
        digest: String,
        single_flight: bool,
    }

    impl OnnxClassifier {
        pub fn load(cfg: &BackendConfig) -> Result<Self, PipelineError> {
            let size = cfg.input_size.unwrap_or(DEFAULT_CLASSIFIER_INPUT);
            let (plan, digest) = compile(&cfg.model_path, size)?;
            Ok(Self {
                plan,
                size,
                name: model_name(&cfg.model_path),
                digest,
                single_flight: cfg.single_flight,
            })
        }

        fn probs(&self, pixels: &RgbImage) -> Result<ClassProbs, BackendError> {
            let out = infer(&self.plan, pixels, self.size)?;
            let values: Vec<f32> = out
                .as_slice::<f32>()
                .map_err(|e| BackendError::new(format!("classifier output: {e:#}")))?
                .to_vec();
            if values.len() != ClfClass::COUNT {
                return Err(BackendError::new(format!(
                    "classifier output has {} values, expected {}",
                    values.len(),
                    ClfClass::COUNT
                )));
            }
            let sum: f64 = values.iter().map(|v| *v as f64).sum();
            if values.iter().all(|v| *v >= 0.0) && (sum - 1.0).abs() <= ClassProbs::SUM_TOLERANCE {
                let v: [f64; ClfClass::COUNT] = std::array::from_fn(|i| values[i] as f64 / sum);
                ClassProbs::new(v)
            } else {
                ClassProbs::from_logits(&values)
            }
        }
    }

    impl ClassifierBackend for OnnxClassifier {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor {
                name: format!("onnx-classifier:{}", self.name),
                version: format!("sha256-{}", self.digest),
            }
        }

        fn probe(&self) -> Result<(), BackendError> {
            self.probs(&RgbImage::new(self.size, self.size)).map(|_| ())
        }

        fn classify(&self, crop: &Crop) -> Result<ClassProbs, BackendError> {
            self.probs(&crop.pixels)
        }

        fn single_flight(&self) -> bool {
            self.single_flight
        }
    }
}
