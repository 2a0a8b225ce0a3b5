//! Geometry and metrics for evaluating detectors and classifiers.

mod bbox;
mod classification;
mod detection;
pub mod interchange;

pub use bbox::{iou, BBox, GroundTruthBox, PredictionBox};
pub use classification::{classification_report, confusion_matrix, ClassScores, ClassificationReport, ConfusionMatrix};
pub use detection::{
    average_precision, coco_iou_thresholds, evaluate_detections, interpolated_ap, map_range, match_predictions, nms,
    nms_indices, pr_curve, recall_points, ClassAp, ClassPr, DetEvalMetadata, DetEvalReport, MapResult, MatchPair,
    Matching, PrPoint, INTERPOLATION,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid box {0:?}: need finite, non-negative corners with min < max")]
    InvalidBox([f64; 4]),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("IoU threshold {0} outside (0, 1]")]
    IouThreshold(f64),
    #[error("predictions and ground truths span several images ({0:?}, {1:?})")]
    MixedImages(String, String),
    #[error("undefined AP: no ground truth boxes")]
    UndefinedAp,
    #[error("label length mismatch: {0} true vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("{0}")]
    Taxonomy(#[from] crate::taxonomy::TaxonomyError),
    #[error("box CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("box CSV line {line}: {message}")]
    Row { line: u64, message: String },
}
