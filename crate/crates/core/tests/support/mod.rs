//! Independent reference implementations and seeded instance generators,
//! shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use plugtrace::vision::{BBox, ConfusionMatrix, GroundTruthBox, PredictionBox};
use plugtrace::{ClfClass, DetClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One single-image detection instance with integer box corners.
#[derive(Debug, Clone)]
pub struct DetInstance {
    pub preds: Vec<PredictionBox>,
    pub gts: Vec<GroundTruthBox>,
}

fn int_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0 = rng.random_range(0..16) as f64;
    let y0 = rng.random_range(0..16) as f64;
    let w = rng.random_range(1..10) as f64;
    let h = rng.random_range(1..10) as f64;
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

fn det_class(rng: &mut ChaCha8Rng) -> DetClass {
    if rng.random_bool(0.8) {
        DetClass::Socket
    } else {
        DetClass::NaSwitchboard
    }
}

/// At most 6 predictions and 4 ground truths, at least one ground truth.
/// Predictions are often jittered copies of ground truths so matches happen.
pub fn det_instance(seed: u64) -> DetInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_gt = rng.random_range(1..=4);
    let gts: Vec<GroundTruthBox> = (0..n_gt)
        .map(|_| GroundTruthBox {
            image_id: "img".into(),
            cls: det_class(&mut rng),
            bbox: int_box(&mut rng),
        })
        .collect();
    let n_pred = rng.random_range(0..=6);
    let preds = (0..n_pred)
        .map(|_| {
            let (cls, bbox) = if rng.random_bool(0.6) {
                let g = &gts[rng.random_range(0..gts.len())];
                let d = |rng: &mut ChaCha8Rng| rng.random_range(-1..=1) as f64;
                let b = &g.bbox;
                let (x0, y0) = ((b.x_min + d(&mut rng)).max(0.0), (b.y_min + d(&mut rng)).max(0.0));
                let (x1, y1) = ((b.x_max + d(&mut rng)).max(x0 + 1.0), (b.y_max + d(&mut rng)).max(y0 + 1.0));
                (g.cls, BBox::new(x0, y0, x1, y1).unwrap())
            } else {
                (det_class(&mut rng), int_box(&mut rng))
            };
            // a coarse grid so ties occur
            let conf = rng.random_range(1..=10) as f64 / 10.0;
            PredictionBox::new("img", cls, bbox, conf).unwrap()
        })
        .collect();
    DetInstance { preds, gts }
}

pub fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let area = |r: &BBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `(pred, Option<gt>)` in visiting order.
pub fn match_ref(preds: &[PredictionBox], gts: &[GroundTruthBox], t: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // stable sort: equal confidences stay in input order
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for p in order {
        let mut cands: Vec<(f64, usize)> = (0..gts.len())
            .filter(|&g| !used[g] && gts[g].cls == preds[p].cls)
            .map(|g| (iou_ref(&preds[p].bbox, &gts[g].bbox), g))
            .filter(|&(v, _)| v >= t)
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let hit = cands.first().map(|&(_, g)| g);
        if let Some(g) = hit {
            used[g] = true;
        }
        out.push((p, hit));
    }
    out
}

/// `(tp, fp, fn)` over the whole instance.
pub fn counts_ref(preds: &[PredictionBox], gts: &[GroundTruthBox], t: f64) -> (usize, usize, usize) {
    let m = match_ref(preds, gts, t);
    let tp = m.iter().filter(|(_, g)| g.is_some()).count();
    (tp, preds.len() - tp, gts.len() - tp)
}

/// 101-point AP: for each recall level, the best precision at any rank
/// reaching that recall.
pub fn ap_ref(preds: &[PredictionBox], gts: &[GroundTruthBox], t: f64) -> f64 {
    let m = match_ref(preds, gts, t);
    let mut pr = Vec::new();
    let mut tp = 0usize;
    for (k, (_, g)) in m.iter().enumerate() {
        if g.is_some() {
            tp += 1;
        }
        pr.push((tp as f64 / (k + 1) as f64, tp as f64 / gts.len() as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        sum += pr.iter().filter(|p| p.1 >= r).map(|p| p.0).fold(0.0, f64::max);
    }
    sum / 101.0
}

/// Random label pairs over all 13 classifier classes.
pub fn label_pairs(seed: u64) -> (Vec<ClfClass>, Vec<ClfClass>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..400);
    let bias = rng.random_range(0.0..0.9);
    let mut t = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(0..ClfClass::COUNT);
        let b = if rng.random_bool(bias) {
            a
        } else {
            rng.random_range(0..ClfClass::COUNT)
        };
        t.push(ClfClass::from_index(a).unwrap());
        p.push(ClfClass::from_index(b).unwrap());
    }
    (t, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfRef {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub accuracy: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
}

/// Arithmetic reference: macro averages run over classes seen in either
/// the truth or the predictions; an empty denominator counts as 0.
pub fn clf_ref(t: &[ClfClass], p: &[ClfClass]) -> ClfRef {
    let n = ClfClass::COUNT;
    let mut counts = vec![vec![0u64; n]; n];
    for (a, b) in t.iter().zip(p) {
        counts[a.index()][b.index()] += 1;
    }
    let total = t.len() as u64;
    let correct = t.iter().zip(p).filter(|(a, b)| a == b).count();
    let (mut sp, mut sr, mut sf, mut k) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..n {
        let tp = t.iter().zip(p).filter(|(a, b)| a.index() == c && b.index() == c).count() as f64;
        let support = t.iter().filter(|a| a.index() == c).count() as f64;
        let predicted = p.iter().filter(|b| b.index() == c).count() as f64;
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        sp += prec;
        sr += rec;
        sf += f1;
        k += 1.0;
    }
    ClfRef {
        counts,
        total,
        accuracy: correct as f64 / total as f64,
        macro_p: sp / k,
        macro_r: sr / k,
        macro_f1: sf / k,
    }
}

pub fn matrix_counts(m: &ConfusionMatrix) -> Vec<Vec<u64>> {
    m.counts.clone()
}

/// Capital cities as `(iso2, lat, lon)`.
pub const CAPITALS: [(&str, f64, f64); 20] = [
    ("FR", 48.8566, 2.3522),
    ("DE", 52.5200, 13.4050),
    ("ES", 40.4168, -3.7038),
    ("IT", 41.9028, 12.4964),
    ("PL", 52.2297, 21.0122),
    ("GB", 51.5074, -0.1278),
    ("US", 38.9072, -77.0369),
    ("CA", 45.4215, -75.6972),
    ("MX", 19.4326, -99.1332),
    ("BR", -15.7939, -47.8828),
    ("AR", -34.6037, -58.3816),
    ("ZA", -25.7479, 28.2293),
    ("EG", 30.0444, 31.2357),
    ("KE", -1.2921, 36.8219),
    ("IN", 28.6139, 77.2090),
    ("CN", 39.9042, 116.4074),
    ("JP", 35.6762, 139.6503),
    ("AU", -35.2809, 149.1300),
    ("RU", 55.7558, 37.6173),
    ("TR", 39.9334, 32.8597),
];

/// Mid South Atlantic.
pub const OCEAN: (f64, f64) = (-30.0, -20.0);
