//! Stage 1 → Stage 2 orchestration: detect, filter, suppress, crop,
//! classify and assign a lifecycle status to every detection.

pub mod backend;
pub mod image;
pub mod onnx;
pub mod stub;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{ClfClass, DetClass};
use crate::vision::{nms_indices, BBox, PredictionBox};

pub use self::backend::{
    load_classifier, load_detector, BackendConfig, BackendDescriptor, BackendError, BackendKind, ClassProbs,
    ClassifierBackend, DetectorBackend,
};
pub use self::image::{crop, crop_rect, Crop, ImageRef, ImageSource, PixelRect};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("image {image_id}: {message}")]
    Image { image_id: String, message: String },
    #[error("crop box {0:?} does not intersect the image")]
    EmptyCrop(BBox),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backend {backend} failed health check: {error}")]
    Unhealthy { backend: BackendDescriptor, error: BackendError },
    #[error("duplicate image id {0}")]
    DuplicateImage(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl PipelineError {
    pub(crate) fn image(id: &str, e: impl fmt::Display) -> Self {
        PipelineError::Image {
            image_id: id.to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detections below this detector confidence are dropped.
    pub det_conf_min: f64,
    /// Non-noise findings below this classifier probability are BELOW_THRESHOLD.
    pub clf_threshold: f64,
    /// Crop growth on each side as a fraction of box width/height.
    pub crop_pad_fraction: f64,
    pub nms_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            det_conf_min: 0.25,
            clf_threshold: 0.0,
            crop_pad_fraction: 0.1,
            nms_iou: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("det_conf_min", self.det_conf_min)?;
        unit("clf_threshold", self.clf_threshold)?;
        if !(self.crop_pad_fraction >= 0.0 && self.crop_pad_fraction.is_finite()) {
            return Err(PipelineError::Config(format!(
                "crop_pad_fraction = {} must be >= 0",
                self.crop_pad_fraction
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(PipelineError::Config(format!("nms_iou = {} outside (0, 1]", self.nms_iou)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingStatus {
    Valid,
    Noise,
    BelowThreshold,
    NaFiltered,
}

impl FindingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingStatus::Valid => "VALID",
            FindingStatus::Noise => "NOISE",
            FindingStatus::BelowThreshold => "BELOW_THRESHOLD",
            FindingStatus::NaFiltered => "NA_FILTERED",
        }
    }
}

impl std::str::FromStr for FindingStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            FindingStatus::Valid,
            FindingStatus::Noise,
            FindingStatus::BelowThreshold,
            FindingStatus::NaFiltered,
        ]
        .into_iter()
        .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| format!("unknown finding status {s:?}"))
    }
}

/// Status of a classified detection. NOISE wins over the threshold.
pub fn assign_status(top_class: ClfClass, top_prob: f64, clf_threshold: f64) -> FindingStatus {
    if top_class.is_noise() {
        FindingStatus::Noise
    } else if top_prob < clf_threshold {
        FindingStatus::BelowThreshold
    } else {
        FindingStatus::Valid
    }
}

/// One detected, cropped and classified socket region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocketFinding {
    /// `<image_id>#<rank>`, rank by descending detector confidence.
    pub finding_id: String,
    pub image_id: String,
    pub bbox: BBox,
    pub det_conf: f64,
    pub probs: ClassProbs,
    pub top_class: ClfClass,
    pub top_prob: f64,
    pub status: FindingStatus,
}

impl SocketFinding {
    pub fn new(
        finding_id: String,
        image_id: String,
        bbox: BBox,
        det_conf: f64,
        probs: ClassProbs,
        clf_threshold: f64,
    ) -> Self {
        let (top_class, top_prob) = probs.top();
        Self {
            finding_id,
            image_id,
            bbox,
            det_conf,
            probs,
            top_class,
            top_prob,
            status: assign_status(top_class, top_prob, clf_threshold),
        }
    }
}

/// Threshold comparison for classifier confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// `top_prob > t`
    Strict,
    /// `top_prob >= t`
    #[default]
    Inclusive,
}

impl Comparator {
    pub fn admits(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Strict => value > threshold,
            Comparator::Inclusive => value >= threshold,
        }
    }
}

impl std::str::FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(Comparator::Strict),
            "inclusive" => Ok(Comparator::Inclusive),
            other => Err(format!("unknown comparator {other:?} (expected strict or inclusive)")),
        }
    }
}

/// VALID findings whose top probability passes `threshold` under `cmp`, in input order.
pub fn retain_valid<'a>(
    findings: &'a [SocketFinding],
    threshold: f64,
    cmp: Comparator,
) -> impl Iterator<Item = &'a SocketFinding> + 'a {
    findings
        .iter()
        .filter(move |f| f.status == FindingStatus::Valid && cmp.admits(f.top_prob, threshold))
}

/// VALID findings strictly above `threshold`, in input order.
pub fn apply_threshold(findings: &[SocketFinding], threshold: f64) -> Vec<SocketFinding> {
    retain_valid(findings, threshold, Comparator::Strict).cloned().collect()
}

/// What happened to one raw detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Lifecycle {
    /// Box empty after clamping to the image, or confidence outside [0, 1].
    InvalidGeometry,
    NaFiltered,
    BelowDetConf,
    Suppressed { by_detection: usize },
    ClassifierError { message: String },
    Classified {
        finding_id: String,
        top_class: ClfClass,
        top_prob: f64,
        probs: ClassProbs,
        status: FindingStatus,
    },
}

/// Audit-log line: one per raw detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub image_id: String,
    /// Index in the detector's output for this image.
    pub detection_index: usize,
    pub det_class: DetClass,
    pub det_conf: f64,
    pub raw_bbox: BBox,
    /// Box after clamping to the image bounds.
    pub bbox: Option<BBox>,
    pub lifecycle: Lifecycle,
}

/// An image that produced no findings because a stage failed for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub stage: String,
    pub message: String,
}

/// Detection bookkeeping for a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub detections: usize,
    pub invalid_geometry: usize,
    pub na_filtered: usize,
    pub below_det_conf: usize,
    pub suppressed: usize,
    pub classifier_errors: usize,
    pub findings: usize,
    pub valid: usize,
    pub noise: usize,
    pub below_threshold: usize,
}

impl Funnel {
    pub fn add(&mut self, o: &Funnel) {
        self.detections += o.detections;
        self.invalid_geometry += o.invalid_geometry;
        self.na_filtered += o.na_filtered;
        self.below_det_conf += o.below_det_conf;
        self.suppressed += o.suppressed;
        self.classifier_errors += o.classifier_errors;
        self.findings += o.findings;
        self.valid += o.valid;
        self.noise += o.noise;
        self.below_threshold += o.below_threshold;
    }

    /// Every detection lands in exactly one bucket.
    pub fn is_conserved(&self) -> bool {
        self.detections
            == self.invalid_geometry
                + self.na_filtered
                + self.below_det_conf
                + self.suppressed
                + self.classifier_errors
                + self.findings
            && self.findings == self.valid + self.noise + self.below_threshold
    }

    /// Findings that survived the noise class.
    pub fn non_noise(&self) -> usize {
        self.valid + self.below_threshold
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineRun {
    pub detector: BackendDescriptor,
    pub classifier: BackendDescriptor,
    pub config: PipelineConfig,
    /// Ordered by image id, then descending detector confidence.
    pub findings: Vec<SocketFinding>,
    pub errors: Vec<ImageFailure>,
    pub funnel: Funnel,
    #[serde(skip)]
    pub audit: Vec<AuditRecord>,
}

impl PipelineRun {
    /// Audit log as JSON lines.
    pub fn audit_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.audit {
            out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker cap; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Skip the backend health probes, for callers that probed already.
    pub skip_probe: bool,
}

/// Serializes calls to a backend that declared single-flight.
struct Gate(Option<Mutex<()>>);

impl Gate {
    fn new(single_flight: bool) -> Self {
        Gate(single_flight.then(|| Mutex::new(())))
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        match &self.0 {
            Some(m) => {
                let _guard = m.lock().unwrap_or_else(|e| e.into_inner());
                f()
            }
            None => f(),
        }
    }
}

struct ImageOutcome {
    findings: Vec<SocketFinding>,
    audit: Vec<AuditRecord>,
    failure: Option<ImageFailure>,
    funnel: Funnel,
}

struct Stages<'a> {
    det: &'a dyn DetectorBackend,
    clf: &'a dyn ClassifierBackend,
    cfg: &'a PipelineConfig,
    det_gate: Gate,
    clf_gate: Gate,
}

impl Stages<'_> {
    fn failed(image: &ImageRef, stage: &str, message: String) -> ImageOutcome {
        ImageOutcome {
            findings: Vec::new(),
            audit: Vec::new(),
            failure: Some(ImageFailure {
                image_id: image.id.clone(),
                stage: stage.into(),
                message,
            }),
            funnel: Funnel::default(),
        }
    }

    fn process(&self, image: &ImageRef) -> ImageOutcome {
        let pixels = match image.load() {
            Ok(p) => p,
            Err(e) => return Self::failed(image, "load", e.to_string()),
        };
        let detections = match self.det_gate.run(|| self.det.detect(image, &pixels)) {
            Ok(d) => d,
            Err(e) => return Self::failed(image, "detect", e.to_string()),
        };

        let mut funnel = Funnel {
            detections: detections.len(),
            ..Funnel::default()
        };
        let mut lifecycle: Vec<Option<Lifecycle>> = vec![None; detections.len()];
        let mut clamped: Vec<Option<BBox>> = vec![None; detections.len()];

        // Filter stage: geometry, NA class, detector confidence.
        let mut survivors: Vec<usize> = Vec::new();
        for (i, d) in detections.iter().enumerate() {
            clamped[i] = d.bbox.clamp_to(image.width as f64, image.height as f64);
            if clamped[i].is_none() || !(0.0..=1.0).contains(&d.confidence) {
                lifecycle[i] = Some(Lifecycle::InvalidGeometry);
                funnel.invalid_geometry += 1;
            } else if d.cls == DetClass::NaSwitchboard {
                lifecycle[i] = Some(Lifecycle::NaFiltered);
                funnel.na_filtered += 1;
            } else if d.confidence < self.cfg.det_conf_min {
                lifecycle[i] = Some(Lifecycle::BelowDetConf);
                funnel.below_det_conf += 1;
            } else {
                survivors.push(i);
            }
        }

        let candidates: Vec<PredictionBox> = survivors
            .iter()
            .map(|&i| PredictionBox {
                bbox: clamped[i].expect("survivor has a box"),
                ..detections[i].clone()
            })
            .collect();
        let kept_local = nms_indices(&candidates, self.cfg.nms_iou);
        let kept_set: BTreeSet<usize> = kept_local.iter().copied().collect();
        for (local, &i) in survivors.iter().enumerate() {
            if !kept_set.contains(&local) {
                let by = kept_local
                    .iter()
                    .copied()
                    .find(|&k| crate::vision::iou(&candidates[k].bbox, &candidates[local].bbox) >= self.cfg.nms_iou)
                    .map(|k| survivors[k])
                    .unwrap_or(i);
                lifecycle[i] = Some(Lifecycle::Suppressed { by_detection: by });
                funnel.suppressed += 1;
            }
        }

        // Classify survivors in descending confidence.
        let mut findings = Vec::new();
        for local in kept_local {
            let i = survivors[local];
            let bbox = candidates[local].bbox;
            let classified = image::crop_rect(image.width, image.height, &bbox, self.cfg.crop_pad_fraction)
                .map_err(|e| e.to_string())
                .and_then(|rect| {
                    let crop = Crop {
                        image_id: image.id.clone(),
                        source_bbox: bbox,
                        rect,
                        pixels: image::crop_pixels(&pixels, rect),
                    };
                    self.clf_gate.run(|| self.clf.classify(&crop)).map_err(|e| e.to_string())
                });
            match classified {
                Ok(probs) => {
                    let f = SocketFinding::new(
                        format!("{}#{}", image.id, findings.len()),
                        image.id.clone(),
                        bbox,
                        detections[i].confidence,
                        probs,
                        self.cfg.clf_threshold,
                    );
                    match f.status {
                        FindingStatus::Valid => funnel.valid += 1,
                        FindingStatus::Noise => funnel.noise += 1,
                        FindingStatus::BelowThreshold => funnel.below_threshold += 1,
                        FindingStatus::NaFiltered => unreachable!("classified findings are never NA"),
                    }
                    funnel.findings += 1;
                    lifecycle[i] = Some(Lifecycle::Classified {
                        finding_id: f.finding_id.clone(),
                        top_class: f.top_class,
                        top_prob: f.top_prob,
                        probs: f.probs,
                        status: f.status,
                    });
                    findings.push(f);
                }
                Err(message) => {
                    funnel.classifier_errors += 1;
                    lifecycle[i] = Some(Lifecycle::ClassifierError { message });
                }
            }
        }

        let audit = detections
            .iter()
            .enumerate()
            .map(|(i, d)| AuditRecord {
                image_id: image.id.clone(),
                detection_index: i,
                det_class: d.cls,
                det_conf: d.confidence,
                raw_bbox: d.bbox,
                bbox: clamped[i],
                lifecycle: lifecycle[i].take().expect("every detection reaches a stage"),
            })
            .collect();

        ImageOutcome {
            findings,
            audit,
            failure: None,
            funnel,
        }
    }
}

pub fn probe_backends(det: &dyn DetectorBackend, clf: &dyn ClassifierBackend) -> Result<(), PipelineError> {
    det.probe().map_err(|error| PipelineError::Unhealthy {
        backend: det.descriptor(),
        error,
    })?;
    clf.probe().map_err(|error| PipelineError::Unhealthy {
        backend: clf.descriptor(),
        error,
    })
}

/// Runs detection and classification over `images`.
///
/// Failures on individual images become [`ImageFailure`] records and the
/// batch continues.
pub fn run_pipeline(
    images: &[ImageRef],
    det: &dyn DetectorBackend,
    clf: &dyn ClassifierBackend,
    cfg: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    run_pipeline_with(images, det, clf, cfg, RunOptions::default())
}

pub fn run_pipeline_with(
    images: &[ImageRef],
    det: &dyn DetectorBackend,
    clf: &dyn ClassifierBackend,
    cfg: &PipelineConfig,
    opts: RunOptions,
) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    if !opts.skip_probe {
        probe_backends(det, clf)?;
    }
    let mut seen = BTreeSet::new();
    for img in images {
        if !seen.insert(img.id.as_str()) {
            return Err(PipelineError::DuplicateImage(img.id.clone()));
        }
    }

    let stages = Stages {
        det,
        clf,
        cfg,
        det_gate: Gate::new(det.single_flight()),
        clf_gate: Gate::new(clf.single_flight()),
    };
    let work = || images.par_iter().map(|img| (img.id.clone(), stages.process(img))).collect::<Vec<_>>();
    let mut outcomes = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));

    let mut run = PipelineRun {
        detector: det.descriptor(),
        classifier: clf.descriptor(),
        config: *cfg,
        findings: Vec::new(),
        errors: Vec::new(),
        funnel: Funnel::default(),
        audit: Vec::new(),
    };
    for (_, o) in outcomes {
        run.findings.extend(o.findings);
        run.audit.extend(o.audit);
        run.errors.extend(o.failure);
        run.funnel.add(&o.funnel);
    }
    Ok(run)
}

#[cfg(test)]
mod tests;
