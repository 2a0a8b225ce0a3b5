//! Deterministic stub backends driven by sidecar annotation CSVs.
//!
//! The detector replays boxes from a sidecar in the box interchange format.
//! The classifier looks up the sidecar label whose box best overlaps the
//! crop's source box; `class_id` is the classifier class index (A=0 .. L=11,
//! NOISE=12) and the optional `confidence` is the top-class probability.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::taxonomy::{ClfClass, DetClass};
use crate::vision::interchange::{read_rows, BoxRow};
use crate::vision::{iou, BBox, PredictionBox};

use super::backend::{BackendConfig, BackendDescriptor, BackendError, ClassProbs, ClassifierBackend, DetectorBackend};
use super::image::{Crop, ImageRef};
use super::PipelineError;

fn sidecar_digest(rows: &[BoxRow]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        h.update(format!(
            "{},{},{},{},{},{},{:?}\n",
            r.image_id, r.class_id, r.x_min, r.y_min, r.x_max, r.y_max, r.confidence
        ));
    }
    hex::encode(h.finalize())[..12].to_string()
}

fn read_sidecar(path: &Path) -> Result<Vec<BoxRow>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let rows = read_rows(file).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone)]
pub struct StubDetector {
    boxes: HashMap<String, Vec<PredictionBox>>,
    digest: String,
    single_flight: bool,
}

impl StubDetector {
    /// Rows without a confidence replay at confidence 1.0.
    pub fn from_rows(rows: &[BoxRow]) -> Result<Self, PipelineError> {
        let mut boxes: HashMap<String, Vec<PredictionBox>> = HashMap::new();
        for r in rows {
            let cls = DetClass::from_id(r.class_id).map_err(|e| PipelineError::Config(e.to_string()))?;
            let bbox = r.bbox().map_err(|e| PipelineError::Config(e.to_string()))?;
            let pred = PredictionBox::new(r.image_id.clone(), cls, bbox, r.confidence.unwrap_or(1.0))
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            boxes.entry(r.image_id.clone()).or_default().push(pred);
        }
        Ok(Self {
            boxes,
            digest: sidecar_digest(rows),
            single_flight: false,
        })
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_rows(&read_sidecar(path.as_ref())?)
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, PipelineError> {
        let mut d = Self::from_csv(&cfg.model_path)?;
        d.single_flight = cfg.single_flight;
        Ok(d)
    }
}

impl DetectorBackend for StubDetector {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "stub-detector".into(),
            version: format!("sidecar-{}", self.digest),
        }
    }

    fn detect(&self, image: &ImageRef, _pixels: &RgbImage) -> Result<Vec<PredictionBox>, BackendError> {
        Ok(self.boxes.get(&image.id).cloned().unwrap_or_default())
    }

    fn single_flight(&self) -> bool {
        self.single_flight
    }
}

#[derive(Debug, Clone)]
struct Label {
    bbox: BBox,
    class: ClfClass,
    prob: f64,
}

#[derive(Debug, Clone)]
pub struct StubClassifier {
    labels: HashMap<String, Vec<Label>>,
    noise: f64,
    seed: u64,
    digest: String,
    single_flight: bool,
}

/// Minimum overlap between a crop's source box and a sidecar label.
const LABEL_MIN_IOU: f64 = 0.5;

impl StubClassifier {
    pub fn from_rows(rows: &[BoxRow]) -> Result<Self, PipelineError> {
        let mut labels: HashMap<String, Vec<Label>> = HashMap::new();
        for r in rows {
            let class = ClfClass::from_index(r.class_id as usize).map_err(|e| PipelineError::Config(e.to_string()))?;
            let bbox = r.bbox().map_err(|e| PipelineError::Config(e.to_string()))?;
            let prob = r.confidence.unwrap_or(1.0);
            // the labelled class must stay the arg-max once the rest is spread evenly
            if !(prob > 1.0 / ClfClass::COUNT as f64 && prob <= 1.0) {
                return Err(PipelineError::Config(format!(
                    "stub label probability {prob} for {} must lie in (1/13, 1]",
                    r.image_id
                )));
            }
            labels.entry(r.image_id.clone()).or_default().push(Label { bbox, class, prob });
        }
        Ok(Self {
            labels,
            noise: 0.0,
            seed: 0,
            digest: sidecar_digest(rows),
            single_flight: false,
        })
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_rows(&read_sidecar(path.as_ref())?)
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, PipelineError> {
        let mut c = Self::from_csv(&cfg.model_path)?;
        c.single_flight = cfg.single_flight;
        if let Some(noise) = cfg.noise {
            c = c.with_noise(noise, cfg.seed.unwrap_or(0))?;
        }
        Ok(c)
    }

    /// Adds seeded uniform noise in `[0, amplitude)` to every class before renormalizing.
    pub fn with_noise(mut self, amplitude: f64, seed: u64) -> Result<Self, PipelineError> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(PipelineError::Config(format!("noise amplitude {amplitude} must be >= 0")));
        }
        self.noise = amplitude;
        self.seed = seed;
        Ok(self)
    }

    fn base_vector(label: &Label) -> [f64; ClfClass::COUNT] {
        let rest = (1.0 - label.prob) / (ClfClass::COUNT - 1) as f64;
        let mut v = [rest; ClfClass::COUNT];
        v[label.class.index()] = label.prob;
        v
    }

    fn noise_rng(&self, crop: &Crop) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(crop.image_id.as_bytes());
        for v in [crop.source_bbox.x_min, crop.source_bbox.y_min, crop.source_bbox.x_max, crop.source_bbox.y_max] {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

impl ClassifierBackend for StubClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        let mut version = format!("sidecar-{}", self.digest);
        if self.noise > 0.0 {
            version.push_str(&format!("+noise{}-seed{}", self.noise, self.seed));
        }
        BackendDescriptor {
            name: "stub-classifier".into(),
            version,
        }
    }

    fn classify(&self, crop: &Crop) -> Result<ClassProbs, BackendError> {
        let candidates = self
            .labels
            .get(&crop.image_id)
            .ok_or_else(|| BackendError::new(format!("no sidecar labels for image {}", crop.image_id)))?;
        let mut best: Option<(&Label, f64)> = None;
        for l in candidates {
            let v = iou(&l.bbox, &crop.source_bbox);
            if v >= LABEL_MIN_IOU && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((l, v));
            }
        }
        let (label, _) = best.ok_or_else(|| {
            BackendError::new(format!("no sidecar label overlaps crop {:?} in {}", crop.source_bbox, crop.image_id))
        })?;

        let mut v = Self::base_vector(label);
        if self.noise > 0.0 {
            let mut rng = self.noise_rng(crop);
            for x in v.iter_mut() {
                *x += rng.random::<f64>() * self.noise;
            }
            let sum: f64 = v.iter().sum();
            for x in v.iter_mut() {
                *x /= sum;
            }
        }
        ClassProbs::new(v)
    }

    fn single_flight(&self) -> bool {
        self.single_flight
    }
}
