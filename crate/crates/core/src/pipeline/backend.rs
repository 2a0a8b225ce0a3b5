//! Pluggable detector and classifier backends.

use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::taxonomy::ClfClass;
use crate::vision::PredictionBox;

use super::image::{Crop, ImageRef};
use super::PipelineError;

/// Name and version of a model backend, recorded in every report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub version: String,
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl fmt::Display) -> Self {
        Self(msg.to_string())
    }
}

/// Stage 1: finds sockets (and switchboards) in a full image.
///
/// Calls are synchronous per image. Implementations that cannot take
/// concurrent calls return `true` from [`single_flight`](Self::single_flight)
/// and the orchestrator serializes them.
pub trait DetectorBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Health check run before a batch.
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn detect(&self, image: &ImageRef, pixels: &RgbImage) -> Result<Vec<PredictionBox>, BackendError>;

    fn single_flight(&self) -> bool {
        false
    }
}

/// Stage 2: assigns a probability to each of the 13 classes for a crop.
pub trait ClassifierBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn classify(&self, crop: &Crop) -> Result<ClassProbs, BackendError>;

    fn single_flight(&self) -> bool {
        false
    }
}

/// Probability vector over [`ClfClass::ALL`]: non-negative, sums to 1 ± 1e-6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClassProbs([f64; ClfClass::COUNT]);

impl ClassProbs {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(values: [f64; ClfClass::COUNT]) -> Result<Self, BackendError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BackendError::new(format!("probabilities must be finite and >= 0: {values:?}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(BackendError::new(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    /// Normalizes raw scores with a softmax.
    pub fn from_logits(logits: &[f32]) -> Result<Self, BackendError> {
        if logits.len() != ClfClass::COUNT {
            return Err(BackendError::new(format!(
                "expected {} class scores, got {}",
                ClfClass::COUNT,
                logits.len()
            )));
        }
        let max = logits.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v)) as f64;
        let exps: Vec<f64> = logits.iter().map(|v| (*v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self::new(std::array::from_fn(|i| exps[i] / sum))
    }

    /// All mass on one class.
    pub fn one_hot(class: ClfClass) -> Self {
        let mut v = [0.0; ClfClass::COUNT];
        v[class.index()] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64; ClfClass::COUNT] {
        &self.0
    }

    pub fn get(&self, class: ClfClass) -> f64 {
        self.0[class.index()]
    }

    /// Arg-max, lowest class index on ties.
    pub fn top(&self) -> (ClfClass, f64) {
        let mut best = 0;
        for i in 1..ClfClass::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (ClfClass::ALL[best], self.0[best])
    }
}

impl<'de> Deserialize<'de> for ClassProbs {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; ClfClass::COUNT]>::deserialize(deserializer)?;
        ClassProbs::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Onnx,
    Stub,
}

/// Plugin config file: `{"kind": "onnx"|"stub", "model_path": ..., "input_size": ...}`.
///
/// For stubs, `model_path` names the sidecar CSV. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<u32>,
    /// Stub classifier only: uniform noise amplitude added before renormalizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub single_flight: bool,
}

impl BackendConfig {
    pub fn stub(sidecar: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Stub,
            model_path: sidecar.into(),
            input_size: None,
            noise: None,
            seed: None,
            single_flight: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: BackendConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if cfg.model_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.model_path = dir.join(&cfg.model_path);
            }
        }
        Ok(cfg)
    }
}

pub fn load_detector(cfg: &BackendConfig) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    match cfg.kind {
        BackendKind::Stub => Ok(Box::new(super::stub::StubDetector::from_config(cfg)?)),
        BackendKind::Onnx => super::onnx::load_detector(cfg),
    }
}

pub fn load_classifier(cfg: &BackendConfig) -> Result<Box<dyn ClassifierBackend>, PipelineError> {
    match cfg.kind {
        BackendKind::Stub => Ok(Box::new(super::stub::StubClassifier::from_config(cfg)?)),
        BackendKind::Onnx => super::onnx::load_classifier(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::PlugType;

    #[test]
    fn simplex_enforced() {
        assert!(ClassProbs::new([1.0 / 13.0; 13]).is_ok());
        assert!(ClassProbs::new([0.1; 13]).is_err());
        let mut neg = [0.0; 13];
        neg[0] = 1.1;
        neg[1] = -0.1;
        assert!(ClassProbs::new(neg).is_err());
    }

    #[test]
    fn top_breaks_ties_low() {
        let mut v = [0.0; 13];
        v[3] = 0.5;
        v[7] = 0.5;
        let (c, p) = ClassProbs::new(v).unwrap().top();
        assert_eq!((c, p), (ClfClass::Plug(PlugType::DM), 0.5));
        let (c, _) = ClassProbs::one_hot(ClfClass::Noise).top();
        assert_eq!(c, ClfClass::Noise);
    }

    #[test]
    fn softmax() {
        let mut logits = [0.0f32; 13];
        logits[6] = 5.0;
        let p = ClassProbs::from_logits(&logits).unwrap();
        assert_eq!(p.top().0, ClfClass::Plug(PlugType::G));
        assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ClassProbs::from_logits(&[0.0; 12]).is_err());
    }

    #[test]
    fn config_paths_resolve_relative() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.json");
        std::fs::write(&p, r#"{"kind": "stub", "model_path": "boxes.csv"}"#).unwrap();
        let cfg = BackendConfig::load(&p).unwrap();
        assert_eq!(cfg.kind, BackendKind::Stub);
        assert_eq!(cfg.model_path, dir.path().join("boxes.csv"));
        std::fs::write(&p, r#"{"kind": "tflite", "model_path": "m"}"#).unwrap();
        assert!(BackendConfig::load(&p).is_err());
    }
}
