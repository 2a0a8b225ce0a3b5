//! Detector evaluation: greedy matching, AP with 101-point interpolation,
//! mAP@0.5 and mAP@0.5:0.95, and non-maximum suppression.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::taxonomy::DetClass;

use super::bbox::{iou, GroundTruthBox, PredictionBox};
use super::EvalError;

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Recall sample points 0.00, 0.01, ..., 1.00.
pub fn recall_points() -> [f64; 101] {
    std::array::from_fn(|i| i as f64 / 100.0)
}

/// Name recorded in report metadata.
pub const INTERPOLATION: &str = "101-point (COCO) with running-max precision envelope";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Index into the prediction slice.
    pub pred: usize,
    /// Index into the ground-truth slice, if matched.
    pub gt: Option<usize>,
    pub iou: f64,
}

/// Result of matching the predictions of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// One entry per prediction, in processing order (descending confidence).
    pub pairs: Vec<MatchPair>,
    pub unmatched_gts: Vec<usize>,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.gt.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.pairs.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.unmatched_gts.len()
    }
}

/// Indices of `preds` by descending confidence; equal confidences keep input order.
fn confidence_order(preds: &[&PredictionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(Ordering::Equal)
    });
    order
}

fn check_threshold(iou_thresh: f64) -> Result<(), EvalError> {
    if iou_thresh > 0.0 && iou_thresh <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::IouThreshold(iou_thresh))
    }
}

fn match_refs(preds: &[&PredictionBox], gts: &[&GroundTruthBox], iou_thresh: f64) -> Matching {
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::with_capacity(preds.len());
    for p in confidence_order(preds) {
        let pred = preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.cls != pred.cls {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox);
            if v < iou_thresh {
                continue;
            }
            // strict > keeps the lowest index on ties
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                taken[g] = true;
                pairs.push(MatchPair { pred: p, gt: Some(g), iou: v });
            }
            None => pairs.push(MatchPair { pred: p, gt: None, iou: 0.0 }),
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&g| !taken[g]).collect();
    Matching { pairs, unmatched_gts }
}

/// Greedy one-to-one matching within a single image.
///
/// Predictions are visited by descending confidence; each takes the
/// unmatched same-class ground truth with the highest IoU at or above
/// `iou_thresh` (lowest index on ties).
pub fn match_predictions(
    preds: &[PredictionBox],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> Result<Matching, EvalError> {
    check_threshold(iou_thresh)?;
    let mut ids = preds
        .iter()
        .map(|p| p.image_id.as_str())
        .chain(gts.iter().map(|g| g.image_id.as_str()));
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|id| *id != first) {
            return Err(EvalError::MixedImages(first.to_string(), other.to_string()));
        }
    }
    let p: Vec<&PredictionBox> = preds.iter().collect();
    let g: Vec<&GroundTruthBox> = gts.iter().collect();
    Ok(match_refs(&p, &g, iou_thresh))
}

/// One point per ranked prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Matches per image and returns the TP flag of every prediction, ranked
/// globally by descending confidence (input order on ties).
fn ranked_hits(preds: &[PredictionBox], gts: &[GroundTruthBox], iou_thresh: f64) -> Vec<(usize, bool)> {
    let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<&GroundTruthBox>)> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        by_image.entry(p.image_id.as_str()).or_default().0.push(i);
    }
    for g in gts {
        by_image.entry(g.image_id.as_str()).or_default().1.push(g);
    }
    let mut hit = vec![false; preds.len()];
    for (pred_idx, image_gts) in by_image.values() {
        let image_preds: Vec<&PredictionBox> = pred_idx.iter().map(|&i| &preds[i]).collect();
        let m = match_refs(&image_preds, image_gts, iou_thresh);
        for pair in m.pairs {
            hit[pred_idx[pair.pred]] = pair.gt.is_some();
        }
    }
    let refs: Vec<&PredictionBox> = preds.iter().collect();
    confidence_order(&refs).into_iter().map(|i| (i, hit[i])).collect()
}

/// Precision-recall curve over the confidence ranking.
pub fn pr_curve(
    preds: &[PredictionBox],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> Result<Vec<PrPoint>, EvalError> {
    check_threshold(iou_thresh)?;
    if gts.is_empty() {
        return Err(EvalError::UndefinedAp);
    }
    let n_gt = gts.len() as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    Ok(ranked_hits(preds, gts, iou_thresh)
        .into_iter()
        .map(|(i, is_tp)| {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                confidence: preds[i].confidence,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / n_gt,
            }
        })
        .collect())
}

/// Average precision from a PR curve using 101 recall points and the
/// running-max precision envelope.
pub fn interpolated_ap(curve: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in recall_points() {
        // recall is non-decreasing along the curve
        while k < curve.len() && curve[k].recall < r {
            k += 1;
        }
        if k < curve.len() {
            sum += envelope[k];
        }
    }
    sum / 101.0
}

/// AP of the given predictions against the given ground truths.
///
/// Matching is per image and class-aware; callers usually pass one class.
pub fn average_precision(
    preds: &[PredictionBox],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> Result<f64, EvalError> {
    Ok(interpolated_ap(&pr_curve(preds, gts, iou_thresh)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub cls: DetClass,
    pub ground_truths: usize,
    pub predictions: usize,
    pub ap50: f64,
    /// AP at each of the ten thresholds 0.50..0.95.
    pub ap_by_threshold: Vec<f64>,
    pub ap5095: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map50: f64,
    pub map5095: f64,
    pub per_class: Vec<ClassAp>,
    /// Classes with predictions but no ground truth; excluded from the means.
    pub skipped_classes: Vec<DetClass>,
}

/// mAP@0.5 and mAP@0.5:0.95 over the classes present in the ground truth.
pub fn map_range(preds: &[PredictionBox], gts: &[GroundTruthBox]) -> Result<MapResult, EvalError> {
    let gt_classes: BTreeSet<DetClass> = gts.iter().map(|g| g.cls).collect();
    if gt_classes.is_empty() {
        return Err(EvalError::UndefinedAp);
    }
    let skipped_classes = preds
        .iter()
        .map(|p| p.cls)
        .filter(|c| !gt_classes.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut per_class = Vec::new();
    for cls in gt_classes {
        let cp: Vec<PredictionBox> = preds.iter().filter(|p| p.cls == cls).cloned().collect();
        let cg: Vec<GroundTruthBox> = gts.iter().filter(|g| g.cls == cls).cloned().collect();
        let ap_by_threshold = coco_iou_thresholds()
            .iter()
            .map(|&t| average_precision(&cp, &cg, t))
            .collect::<Result<Vec<_>, _>>()?;
        let ap5095 = ap_by_threshold.iter().sum::<f64>() / ap_by_threshold.len() as f64;
        per_class.push(ClassAp {
            cls,
            ground_truths: cg.len(),
            predictions: cp.len(),
            ap50: ap_by_threshold[0],
            ap_by_threshold,
            ap5095,
        });
    }
    let n = per_class.len() as f64;
    Ok(MapResult {
        map50: per_class.iter().map(|c| c.ap50).sum::<f64>() / n,
        map5095: per_class.iter().map(|c| c.ap5095).sum::<f64>() / n,
        per_class,
        skipped_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPr {
    pub cls: DetClass,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEvalMetadata {
    pub interpolation: String,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
}

/// Detector summary in the shape of the usual P / R / mAP tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEvalReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map5095: f64,
    pub per_class_pr: Vec<ClassPr>,
    pub per_class_ap: Vec<ClassAp>,
    pub metadata: DetEvalMetadata,
}

/// Builds a [`DetEvalReport`].
///
/// Precision and recall are taken at IoU 0.5 over the predictions with
/// confidence at or above `conf_thresh`, averaged over ground-truth classes.
/// mAP always uses every prediction.
pub fn evaluate_detections(
    preds: &[PredictionBox],
    gts: &[GroundTruthBox],
    conf_thresh: f64,
) -> Result<DetEvalReport, EvalError> {
    let map = map_range(preds, gts)?;
    let kept: Vec<PredictionBox> = preds
        .iter()
        .filter(|p| p.confidence >= conf_thresh)
        .cloned()
        .collect();

    let mut per_class_pr = Vec::new();
    for class_ap in &map.per_class {
        let cls = class_ap.cls;
        let cp: Vec<PredictionBox> = kept.iter().filter(|p| p.cls == cls).cloned().collect();
        let cg: Vec<GroundTruthBox> = gts.iter().filter(|g| g.cls == cls).cloned().collect();
        let tp = ranked_hits(&cp, &cg, 0.5).iter().filter(|(_, hit)| *hit).count();
        let fp = cp.len() - tp;
        let fn_ = cg.len() - tp;
        per_class_pr.push(ClassPr {
            cls,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: if cp.is_empty() { 0.0 } else { tp as f64 / cp.len() as f64 },
            recall: tp as f64 / cg.len() as f64,
        });
    }
    let n = per_class_pr.len() as f64;
    Ok(DetEvalReport {
        precision: per_class_pr.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class_pr.iter().map(|c| c.recall).sum::<f64>() / n,
        map50: map.map50,
        map5095: map.map5095,
        per_class_pr,
        per_class_ap: map.per_class,
        metadata: DetEvalMetadata {
            interpolation: INTERPOLATION.to_string(),
            iou_threshold: 0.5,
            confidence_threshold: conf_thresh,
        },
    })
}

/// Greedy non-maximum suppression, per image and class.
///
/// Output is ordered by descending confidence (input order on ties) and no
/// two kept boxes of the same image and class overlap with IoU ≥ `iou_thresh`.
pub fn nms(preds: &[PredictionBox], iou_thresh: f64) -> Vec<PredictionBox> {
    nms_indices(preds, iou_thresh)
        .into_iter()
        .map(|i| preds[i].clone())
        .collect()
}

/// Like [`nms`] but returns indices of kept predictions.
pub fn nms_indices(preds: &[PredictionBox], iou_thresh: f64) -> Vec<usize> {
    let refs: Vec<&PredictionBox> = preds.iter().collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in confidence_order(&refs) {
        let p = &preds[i];
        let suppressed = kept.iter().any(|&k| {
            let q = &preds[k];
            q.image_id == p.image_id && q.cls == p.cls && iou(&q.bbox, &p.bbox) >= iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}
