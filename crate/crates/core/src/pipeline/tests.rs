use std::sync::atomic::{AtomicUsize, Ordering};

use ::image::RgbImage;
use proptest::prelude::*;

use super::stub::{StubClassifier, StubDetector};
use super::*;
use crate::taxonomy::PlugType;
use crate::vision::interchange::BoxRow;

fn row(id: &str, class_id: u32, b: [f64; 4], conf: Option<f64>) -> BoxRow {
    BoxRow {
        image_id: id.into(),
        class_id,
        x_min: b[0],
        y_min: b[1],
        x_max: b[2],
        y_max: b[3],
        confidence: conf,
    }
}

fn blank(id: &str) -> ImageRef {
    ImageRef::from_pixels(id, RgbImage::new(100, 100)).unwrap()
}

fn cfg() -> PipelineConfig {
    PipelineConfig {
        det_conf_min: 0.3,
        clf_threshold: 0.7,
        ..PipelineConfig::default()
    }
}

#[test]
fn zero_detections_zero_findings() {
    let det = StubDetector::from_rows(&[]).unwrap();
    let clf = StubClassifier::from_rows(&[]).unwrap();
    let run = run_pipeline(&[blank("a")], &det, &clf, &cfg()).unwrap();
    assert!(run.findings.is_empty());
    assert!(run.errors.is_empty());
    assert_eq!(run.funnel, Funnel::default());
}

#[test]
fn planted_type_g_socket() {
    let b = [10.0, 10.0, 40.0, 30.0];
    let det = StubDetector::from_rows(&[row("a", 1, b, Some(0.9))]).unwrap();
    let clf = StubClassifier::from_rows(&[row("a", 6, b, None)]).unwrap();
    let run = run_pipeline(&[blank("a")], &det, &clf, &cfg()).unwrap();
    assert_eq!(run.findings.len(), 1);
    let f = &run.findings[0];
    assert_eq!(f.top_class, ClfClass::Plug(PlugType::G));
    assert_eq!(f.status, FindingStatus::Valid);
    assert_eq!(f.finding_id, "a#0");
}

#[test]
fn every_stage_is_counted() {
    let det = StubDetector::from_rows(&[
        row("a", 0, [0.0, 0.0, 10.0, 10.0], Some(0.9)),   // switchboard
        row("a", 1, [20.0, 20.0, 30.0, 30.0], Some(0.1)), // weak
        row("a", 1, [40.0, 40.0, 60.0, 60.0], Some(0.9)),
        row("a", 1, [41.0, 40.0, 60.0, 60.0], Some(0.8)), // overlaps the previous one
        row("a", 1, [70.0, 70.0, 90.0, 90.0], Some(0.7)),
        row("a", 1, [5.0, 70.0, 25.0, 90.0], Some(0.6)),
        row("a", 1, [200.0, 200.0, 210.0, 210.0], Some(0.9)), // outside the frame
        row("a", 1, [5.0, 40.0, 25.0, 60.0], Some(0.5)),      // no label
    ])
    .unwrap();
    let clf = StubClassifier::from_rows(&[
        row("a", 2, [40.0, 40.0, 60.0, 60.0], Some(0.95)),
        row("a", 12, [70.0, 70.0, 90.0, 90.0], None),
        row("a", 4, [5.0, 70.0, 25.0, 90.0], Some(0.5)),
    ])
    .unwrap();
    let run = run_pipeline(&[blank("a")], &det, &clf, &cfg()).unwrap();
    let f = run.funnel;
    assert_eq!(
        (f.detections, f.na_filtered, f.below_det_conf, f.suppressed, f.invalid_geometry, f.classifier_errors),
        (8, 1, 1, 1, 1, 1)
    );
    assert_eq!((f.findings, f.valid, f.noise, f.below_threshold), (3, 1, 1, 1));
    assert!(f.is_conserved());
    assert_eq!(run.audit.len(), 8);
    assert_eq!(run.audit[3].lifecycle, Lifecycle::Suppressed { by_detection: 2 });
    let statuses: Vec<_> = run.findings.iter().map(|f| f.status).collect();
    assert_eq!(statuses, [FindingStatus::Valid, FindingStatus::Noise, FindingStatus::BelowThreshold]);
    let confs: Vec<_> = run.findings.iter().map(|f| f.det_conf).collect();
    assert_eq!(confs, [0.9, 0.7, 0.6]);
    assert_eq!(run.audit_jsonl().lines().count(), 8);
}

#[test]
fn unreadable_image_is_recorded_and_batch_continues() {
    let b = [10.0, 10.0, 40.0, 30.0];
    let det = StubDetector::from_rows(&[row("good", 1, b, None)]).unwrap();
    let clf = StubClassifier::from_rows(&[row("good", 0, b, None)]).unwrap();
    let bad = ImageRef {
        id: "bad".into(),
        source: ImageSource::Encoded(b"garbage".to_vec().into()),
        width: 10,
        height: 10,
    };
    let run = run_pipeline(&[bad, blank("good")], &det, &clf, &cfg()).unwrap();
    assert_eq!(run.findings.len(), 1);
    assert_eq!(run.errors.len(), 1);
    assert_eq!(run.errors[0].image_id, "bad");
    assert_eq!(run.errors[0].stage, "load");
}

#[test]
fn config_validation() {
    for bad in [
        PipelineConfig { det_conf_min: 1.5, ..cfg() },
        PipelineConfig { clf_threshold: -0.1, ..cfg() },
        PipelineConfig { crop_pad_fraction: -1.0, ..cfg() },
        PipelineConfig { nms_iou: 0.0, ..cfg() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(cfg().validate().is_ok());
}

#[test]
fn duplicate_image_ids_rejected() {
    let det = StubDetector::from_rows(&[]).unwrap();
    let clf = StubClassifier::from_rows(&[]).unwrap();
    assert!(matches!(
        run_pipeline(&[blank("a"), blank("a")], &det, &clf, &cfg()),
        Err(PipelineError::DuplicateImage(_))
    ));
}

struct Sick;

impl DetectorBackend for Sick {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "sick".into(),
            version: "0".into(),
        }
    }
    fn probe(&self) -> Result<(), BackendError> {
        Err(BackendError::new("model file missing"))
    }
    fn detect(&self, _: &ImageRef, _: &RgbImage) -> Result<Vec<PredictionBox>, BackendError> {
        unreachable!()
    }
}

#[test]
fn unhealthy_backend_aborts_before_work() {
    let clf = StubClassifier::from_rows(&[]).unwrap();
    assert!(matches!(
        run_pipeline(&[blank("a")], &Sick, &clf, &cfg()),
        Err(PipelineError::Unhealthy { .. })
    ));
}

/// Detector that records the peak number of concurrent calls.
struct Counting {
    inner: StubDetector,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl DetectorBackend for Counting {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn detect(&self, image: &ImageRef, pixels: &RgbImage) -> Result<Vec<PredictionBox>, BackendError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_millis(2));
        self.active.fetch_sub(1, Ordering::SeqCst);
        self.inner.detect(image, pixels)
    }
    fn single_flight(&self) -> bool {
        true
    }
}

#[test]
fn single_flight_backend_is_serialized() {
    let det = Counting {
        inner: StubDetector::from_rows(&[]).unwrap(),
        active: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    };
    let clf = StubClassifier::from_rows(&[]).unwrap();
    let images: Vec<_> = (0..32).map(|i| blank(&format!("img{i:02}"))).collect();
    run_pipeline_with(&images, &det, &clf, &cfg(), RunOptions { jobs: Some(4), ..Default::default() }).unwrap();
    assert_eq!(det.peak.load(Ordering::SeqCst), 1);
}

#[test]
fn threshold_edges() {
    let probs = |p: f64| {
        let mut v = [(1.0 - p) / 12.0; 13];
        v[0] = p;
        ClassProbs::new(v).unwrap()
    };
    let bb = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let fs: Vec<_> = [0.5, 0.7, 0.9, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &p)| SocketFinding::new(format!("x#{i}"), "x".into(), bb, 1.0, probs(p), 0.0))
        .collect();
    assert_eq!(apply_threshold(&fs, 0.0).len(), 4);
    assert!(apply_threshold(&fs, 1.0).is_empty());
    assert_eq!(apply_threshold(&fs, 0.7).len(), 2);
    assert_eq!(retain_valid(&fs, 0.7, Comparator::Inclusive).count(), 3);
}

fn finding_strategy() -> impl Strategy<Value = SocketFinding> {
    (0usize..13, 0.08f64..=1.0, 0.0f64..=1.0).prop_map(|(cls, p, t)| {
        let mut v = [(1.0 - p) / 12.0; 13];
        v[cls] = p;
        let probs = ClassProbs::new(v).unwrap();
        SocketFinding::new("f".into(), "i".into(), BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, probs, t)
    })
}

proptest! {
    #[test]
    fn threshold_funnel_is_monotone(
        fs in prop::collection::vec(finding_strategy(), 0..60),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(apply_threshold(&fs, lo).len() >= apply_threshold(&fs, hi).len());
        let kept = apply_threshold(&fs, lo);
        prop_assert!(kept.iter().all(|f| f.status == FindingStatus::Valid && f.top_prob > lo));
    }

    #[test]
    fn status_is_recomputable(fs in prop::collection::vec(finding_strategy(), 0..30), t in 0.0f64..=1.0) {
        for f in &fs {
            let (c, p) = f.probs.top();
            prop_assert_eq!((c, p), (f.top_class, f.top_prob));
            let again = SocketFinding::new(f.finding_id.clone(), f.image_id.clone(), f.bbox, f.det_conf, f.probs, t);
            prop_assert_eq!(again.status, assign_status(c, p, t));
        }
    }
}
