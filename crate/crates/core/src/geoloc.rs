//! Stage 3: turning classified sockets into country evidence.
//!
//! Findings are scored against known truth (+1 / -1 / 0), swept over
//! classifier-confidence thresholds, and ranked into candidate countries
//! for cases where the truth is unknown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kb::KnowledgeBase;
use crate::pipeline::{apply_threshold, retain_valid, BackendDescriptor, Comparator, FindingStatus, SocketFinding};
use crate::taxonomy::{ClfClass, PlugType};
use crate::CountryCode;

#[derive(Debug, thiserror::Error)]
pub enum GeolocError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("thresholds must be ascending: {0} follows {1}")]
    Unsorted(f64, f64),
    #[error("truth file: {0}")]
    Truth(String),
}

/// +1 for a (type, country) pair in the KB, -1 for a pair outside it, 0 for noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvidenceScore {
    Wrong,
    Neutral,
    Correct,
}

impl EvidenceScore {
    pub fn value(self) -> i8 {
        match self {
            EvidenceScore::Wrong => -1,
            EvidenceScore::Neutral => 0,
            EvidenceScore::Correct => 1,
        }
    }
}

impl Serialize for EvidenceScore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

pub fn score_class(kb: &KnowledgeBase, class: ClfClass, true_country: CountryCode) -> EvidenceScore {
    if class.is_noise() {
        EvidenceScore::Neutral
    } else if kb.is_valid_pair(class, true_country) {
        EvidenceScore::Correct
    } else {
        EvidenceScore::Wrong
    }
}

pub fn score_finding(kb: &KnowledgeBase, f: &SocketFinding, true_country: CountryCode) -> EvidenceScore {
    score_class(kb, f.top_class, true_country)
}

/// How retained findings are turned into scored records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// One record per retained finding.
    #[default]
    PerDetection,
    /// One record per image, using the most frequent retained plug type.
    /// Ties go to the higher summed probability, then the lower class index.
    PerImageMajority,
}

impl std::str::FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "per_detection" | "detection" => Ok(ScoringMode::PerDetection),
            "per_image_majority" | "per_image" | "image" => Ok(ScoringMode::PerImageMajority),
            other => Err(format!("unknown scoring mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub comparator: Comparator,
    pub mode: ScoringMode,
}

/// One threshold's tally.
///
/// `accuracy` is the exact ratio `correct / total`, `None` when nothing
/// was scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub correct: usize,
    pub wrong: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

impl SweepRow {
    fn new(threshold: f64, correct: usize, wrong: usize) -> Self {
        let total = correct + wrong;
        Self {
            threshold,
            correct,
            wrong,
            total,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }
    }

    pub fn accuracy_pct(&self) -> Option<f64> {
        self.accuracy.map(|a| a * 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    pub plug_type: PlugType,
    pub correct: usize,
    pub wrong: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

/// Result of scoring findings at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub row: SweepRow,
    /// Only plug types with at least one scored record.
    pub per_class: Vec<ClassTally>,
    /// Findings classified as noise (score 0, counted nowhere else).
    pub noise: usize,
    /// Retained findings whose image has no truth entry.
    pub excluded: Vec<String>,
}

pub type Truth = BTreeMap<String, CountryCode>;

/// Scores retained findings at threshold `t`.
///
/// Retention is VALID status with `top_prob` passing `t` under the
/// comparator. Findings without a truth entry are excluded and listed.
pub fn evaluate(
    findings: &[SocketFinding],
    truth: &Truth,
    kb: &KnowledgeBase,
    t: f64,
    opts: EvalOptions,
) -> Result<Evaluation, GeolocError> {
    check_threshold(t)?;
    let noise = findings.iter().filter(|f| f.status == FindingStatus::Noise).count();
    let mut excluded = Vec::new();
    let mut records: Vec<(ClfClass, CountryCode)> = Vec::new();

    match opts.mode {
        ScoringMode::PerDetection => {
            for f in retain_valid(findings, t, opts.comparator) {
                match truth.get(&f.image_id) {
                    Some(&c) => records.push((f.top_class, c)),
                    None => excluded.push(f.finding_id.clone()),
                }
            }
        }
        ScoringMode::PerImageMajority => {
            let mut by_image: BTreeMap<&str, Vec<&SocketFinding>> = BTreeMap::new();
            for f in retain_valid(findings, t, opts.comparator) {
                by_image.entry(&f.image_id).or_default().push(f);
            }
            for (image_id, fs) in by_image {
                match truth.get(image_id) {
                    Some(&c) => records.push((majority_class(&fs), c)),
                    None => excluded.extend(fs.iter().map(|f| f.finding_id.clone())),
                }
            }
        }
    }
    if !excluded.is_empty() {
        log::warn!("{} finding(s) excluded at threshold {t}: image has no truth entry", excluded.len());
    }

    let mut tallies: BTreeMap<PlugType, (usize, usize)> = BTreeMap::new();
    let (mut correct, mut wrong) = (0, 0);
    for (class, country) in records {
        let Some(pt) = class.plug_type() else { continue };
        let e = tallies.entry(pt).or_default();
        match score_class(kb, class, country) {
            EvidenceScore::Correct => {
                correct += 1;
                e.0 += 1;
            }
            EvidenceScore::Wrong => {
                wrong += 1;
                e.1 += 1;
            }
            EvidenceScore::Neutral => {}
        }
    }
    let per_class = tallies
        .into_iter()
        .map(|(plug_type, (c, w))| {
            let r = SweepRow::new(t, c, w);
            ClassTally {
                plug_type,
                correct: c,
                wrong: w,
                total: r.total,
                accuracy: r.accuracy,
            }
        })
        .collect();
    Ok(Evaluation {
        row: SweepRow::new(t, correct, wrong),
        per_class,
        noise,
        excluded,
    })
}

fn majority_class(fs: &[&SocketFinding]) -> ClfClass {
    let mut votes: BTreeMap<ClfClass, (usize, f64)> = BTreeMap::new();
    for f in fs {
        let v = votes.entry(f.top_class).or_default();
        v.0 += 1;
        v.1 += f.top_prob;
    }
    let mut best: Option<(ClfClass, (usize, f64))> = None;
    for (c, v) in votes {
        // BTreeMap order is class order, so strict comparison keeps the lowest index on ties
        if best.is_none_or(|(_, b)| v.0 > b.0 || (v.0 == b.0 && v.1 > b.1)) {
            best = Some((c, v));
        }
    }
    best.expect("at least one finding").0
}

fn check_threshold(t: f64) -> Result<(), GeolocError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(GeolocError::Threshold(t))
    }
}

/// Full evaluation at each of `thresholds` (ascending).
pub fn sweep(
    findings: &[SocketFinding],
    truth: &Truth,
    kb: &KnowledgeBase,
    thresholds: &[f64],
    opts: EvalOptions,
) -> Result<Vec<Evaluation>, GeolocError> {
    for w in thresholds.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(GeolocError::Unsorted(w[1], w[0]));
        }
    }
    thresholds.iter().map(|&t| evaluate(findings, truth, kb, t, opts)).collect()
}

pub fn threshold_sweep(
    findings: &[SocketFinding],
    truth: &Truth,
    kb: &KnowledgeBase,
    thresholds: &[f64],
    opts: EvalOptions,
) -> Result<Vec<SweepRow>, GeolocError> {
    Ok(sweep(findings, truth, kb, thresholds, opts)?.into_iter().map(|e| e.row).collect())
}

/// Chart series: `threshold,accuracy,total`, accuracy as a ratio (empty when undefined).
pub fn chart_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,accuracy,total\n");
    for r in rows {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.threshold, acc, r.total);
    }
    out
}

/// Sweep rows as CSV with every column.
pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,correct,wrong,total,accuracy\n");
    for r in rows {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.threshold, r.correct, r.wrong, r.total, acc);
    }
    out
}

/// Human-readable table with accuracies as percentages.
pub fn render_table(rows: &[SweepRow], comparator: Comparator) -> String {
    let op = match comparator {
        Comparator::Strict => ">",
        Comparator::Inclusive => ">=",
    };
    let mut out = format!("{:<12}{:>9}{:>9}{:>9}{:>11}\n", "threshold", "correct", "wrong", "total", "accuracy");
    for r in rows {
        let acc = r.accuracy_pct().map(|a| format!("{a:.2}%")).unwrap_or_else(|| "n/a".into());
        let label = format!("{op} {:.0}%", r.threshold * 100.0);
        let _ = writeln!(out, "{:<12}{:>9}{:>9}{:>9}{:>11}", label, r.correct, r.wrong, r.total, acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub kb_version: String,
    pub comparator: Comparator,
    pub mode: ScoringMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<BackendDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<BackendDescriptor>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBreakdown {
    pub threshold: f64,
    pub classes: Vec<ClassTally>,
}

/// Serializable sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<SweepRow>,
    pub per_class: Vec<ThresholdBreakdown>,
    pub noise: usize,
    pub excluded_findings: Vec<String>,
    pub metadata: ReportMetadata,
}

pub const ACCURACY_NOTE: &str =
    "accuracy is the exact ratio correct / (correct + wrong); noise findings score 0 and enter neither count";

impl EvaluationReport {
    pub fn new(evals: Vec<Evaluation>, metadata: ReportMetadata) -> Self {
        let noise = evals.first().map(|e| e.noise).unwrap_or(0);
        let excluded: BTreeSet<String> = evals.iter().flat_map(|e| e.excluded.iter().cloned()).collect();
        Self {
            rows: evals.iter().map(|e| e.row).collect(),
            per_class: evals
                .iter()
                .map(|e| ThresholdBreakdown {
                    threshold: e.row.threshold,
                    classes: e.per_class.clone(),
                })
                .collect(),
            noise,
            excluded_findings: excluded.into_iter().collect(),
            metadata,
        }
    }
}

/// A country suggested by the retained findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoCandidate {
    pub country: CountryCode,
    pub score: f64,
    /// Finding ids, sorted.
    pub supporting: Vec<String>,
    /// Plug types among the supporting findings.
    pub plug_types: Vec<PlugType>,
    /// Country is listed under every distinct plug type detected.
    pub intersection: bool,
}

/// Ranks countries by summed top-class probability of the VALID findings
/// strictly above `t`.
pub fn rank_candidates(kb: &KnowledgeBase, findings: &[SocketFinding], t: f64) -> Vec<GeoCandidate> {
    let mut retained = apply_threshold(findings, t);
    // summation order fixed so scores do not depend on input order
    retained.sort_by(|a, b| a.finding_id.cmp(&b.finding_id).then(a.top_prob.total_cmp(&b.top_prob)));

    let detected: BTreeSet<PlugType> = retained.iter().filter_map(|f| f.top_class.plug_type()).collect();
    let mut acc: BTreeMap<CountryCode, (f64, Vec<String>, BTreeSet<PlugType>)> = BTreeMap::new();
    for f in &retained {
        let Some(pt) = f.top_class.plug_type() else { continue };
        for &c in kb.countries_for(pt) {
            let e = acc.entry(c).or_default();
            e.0 += f.top_prob;
            e.1.push(f.finding_id.clone());
            e.2.insert(pt);
        }
    }
    let mut out: Vec<GeoCandidate> = acc
        .into_iter()
        .filter(|(_, (score, _, _))| *score > 0.0)
        .map(|(country, (score, supporting, types))| GeoCandidate {
            country,
            score,
            supporting,
            intersection: types.len() == detected.len(),
            plug_types: types.into_iter().collect(),
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.country.cmp(&b.country)));
    out
}

/// Reads `image_id,country` rows; `country` may be a code or a name.
/// Extra columns are ignored, so an ingest manifest works as-is.
pub fn read_truth(path: impl AsRef<Path>) -> Result<Truth, GeolocError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| GeolocError::Truth(format!("{}: {e}", path.display())))?;
    read_truth_from(file).map_err(|e| match e {
        GeolocError::Truth(m) => GeolocError::Truth(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_truth_from(reader: impl std::io::Read) -> Result<Truth, GeolocError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| GeolocError::Truth(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| GeolocError::Truth(format!("missing column {name}")))
    };
    let (id_col, country_col) = (col("image_id")?, col("country")?);
    let mut truth = Truth::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| GeolocError::Truth(e.to_string()))?;
        let line = i + 2;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let raw = rec.get(country_col).unwrap_or_default();
        if raw.is_empty() {
            continue;
        }
        let country = CountryCode::new(raw)
            .or_else(|_| crate::ingest::standardize_name(raw))
            .map_err(|_| GeolocError::Truth(format!("line {line}: unknown country {raw:?}")))?;
        if truth.insert(id.clone(), country).is_some_and(|prev| prev != country) {
            return Err(GeolocError::Truth(format!("line {line}: conflicting country for image {id}")));
        }
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ClassProbs;
    use crate::vision::BBox;
    use proptest::prelude::*;

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn finding(id: &str, image: &str, class: ClfClass, p: f64) -> SocketFinding {
        let mut v = [(1.0 - p) / 12.0; 13];
        v[class.index()] = p;
        SocketFinding::new(
            id.into(),
            image.into(),
            BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            0.9,
            ClassProbs::new(v).unwrap(),
            0.0,
        )
    }

    fn plug(t: PlugType) -> ClfClass {
        ClfClass::Plug(t)
    }

    #[test]
    fn scores() {
        let kb = KnowledgeBase::bundled_v1();
        let noise = finding("n", "i", ClfClass::Noise, 0.9);
        assert_eq!(score_finding(&kb, &noise, cc("IL")).value(), 0);
        let h = finding("h", "i", plug(PlugType::H), 0.9);
        assert_eq!(score_finding(&kb, &h, cc("IL")), EvidenceScore::Correct);
        assert_eq!(score_finding(&kb, &h, cc("US")), EvidenceScore::Wrong);
        assert_eq!(serde_json::to_string(&EvidenceScore::Wrong).unwrap(), "-1");
    }

    #[test]
    fn evaluate_counts_and_excludes() {
        let kb = KnowledgeBase::bundled_v1();
        let fs = vec![
            finding("a#0", "a", plug(PlugType::G), 0.95),
            finding("a#1", "a", plug(PlugType::B), 0.75),
            finding("a#2", "a", ClfClass::Noise, 0.99),
            finding("b#0", "b", plug(PlugType::C), 0.85),
            finding("z#0", "z", plug(PlugType::C), 0.85),
        ];
        let truth: Truth = [("a".to_string(), cc("GB")), ("b".to_string(), cc("FR"))].into();
        let e = evaluate(&fs, &truth, &kb, 0.7, EvalOptions::default()).unwrap();
        assert_eq!((e.row.correct, e.row.wrong, e.row.total), (2, 1, 3));
        assert_eq!(e.noise, 1);
        assert_eq!(e.excluded, ["z#0"]);
        assert_eq!(e.per_class.len(), 3);
        let e = evaluate(&fs, &truth, &kb, 0.9, EvalOptions::default()).unwrap();
        assert_eq!((e.row.correct, e.row.wrong), (1, 0));
        let majority = EvalOptions {
            mode: ScoringMode::PerImageMajority,
            ..EvalOptions::default()
        };
        let e = evaluate(&fs, &truth, &kb, 0.0, majority).unwrap();
        // image a: G and B tie on count, G wins on probability
        assert_eq!((e.row.correct, e.row.wrong), (2, 0));
    }

    #[test]
    fn comparator_matters_on_boundary() {
        let kb = KnowledgeBase::bundled_v1();
        let fs = vec![finding("a#0", "a", plug(PlugType::G), 0.7)];
        let truth: Truth = [("a".to_string(), cc("GB"))].into();
        let strict = EvalOptions {
            comparator: Comparator::Strict,
            ..EvalOptions::default()
        };
        assert_eq!(evaluate(&fs, &truth, &kb, 0.7, strict).unwrap().row.total, 0);
        assert_eq!(evaluate(&fs, &truth, &kb, 0.7, EvalOptions::default()).unwrap().row.total, 1);
    }

    #[test]
    fn sweep_validates_thresholds() {
        let kb = KnowledgeBase::bundled_v1();
        let truth = Truth::new();
        assert!(threshold_sweep(&[], &truth, &kb, &[0.9, 0.7], EvalOptions::default()).is_err());
        assert!(threshold_sweep(&[], &truth, &kb, &[1.5], EvalOptions::default()).is_err());
        let rows = threshold_sweep(&[], &truth, &kb, &[0.0], EvalOptions::default()).unwrap();
        assert_eq!(rows[0].accuracy, None);
        assert_eq!(chart_csv(&rows), "threshold,accuracy,total\n0,,0\n");
    }

    #[test]
    fn single_h_candidate() {
        let kb = KnowledgeBase::bundled_v1();
        assert!(rank_candidates(&kb, &[], 0.0).is_empty());
        let c = rank_candidates(&kb, &[finding("a#0", "a", plug(PlugType::H), 0.95)], 0.7);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].country, cc("IL"));
        assert_eq!(c[0].score, 0.95);
        assert!(c[0].intersection);
        assert!(rank_candidates(&kb, &[finding("a#0", "a", plug(PlugType::H), 0.95)], 1.0).is_empty());
    }

    #[test]
    fn two_type_weights_by_hand() {
        let kb = KnowledgeBase::bundled_v1();
        let fs = [
            finding("a#0", "a", plug(PlugType::G), 0.9),
            finding("a#1", "a", plug(PlugType::C), 0.8),
        ];
        let out = rank_candidates(&kb, &fs, 0.0);
        let g = kb.countries_for(PlugType::G);
        let c = kb.countries_for(PlugType::C);
        assert_eq!(out.len(), g.union(c).count());
        for cand in &out {
            let want = if g.contains(&cand.country) { 0.9 } else { 0.0 } + if c.contains(&cand.country) { 0.8 } else { 0.0 };
            assert!((cand.score - want).abs() < 1e-12, "{}", cand.country);
            assert_eq!(cand.intersection, g.contains(&cand.country) && c.contains(&cand.country));
        }
        assert!(out.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].country < w[1].country)));
    }

    #[test]
    fn truth_accepts_codes_and_names() {
        let t = read_truth_from("image_id,hotel_id,country\na,1,gb\nb,2,Deutschland\nc,3,\n".as_bytes()).unwrap();
        assert_eq!(t["a"], cc("GB"));
        assert_eq!(t["b"], cc("DE"));
        assert!(!t.contains_key("c"));
        assert!(read_truth_from("image_id,country\na,Atlantis\n".as_bytes()).is_err());
        assert!(read_truth_from("id,country\na,GB\n".as_bytes()).is_err());
    }

    fn arb_findings() -> impl Strategy<Value = Vec<SocketFinding>> {
        prop::collection::vec((0usize..13, 0.08f64..=1.0, 0usize..8), 0..200).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (cls, p, img))| finding(&format!("img{img}#{i}"), &format!("img{img}"), ClfClass::ALL[cls], p))
                .collect()
        })
    }

    fn arb_truth() -> impl Strategy<Value = Truth> {
        let pool = ["GB", "FR", "US", "IL", "BR", "IN", "AU", "DE"];
        prop::collection::vec(0usize..pool.len(), 8).prop_map(move |v| {
            v.into_iter()
                .enumerate()
                .map(|(i, c)| (format!("img{i}"), cc(pool[c])))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sweep_matches_naive_recount(fs in arb_findings(), truth in arb_truth(), strict in any::<bool>()) {
            let kb = KnowledgeBase::bundled_v1();
            let comparator = if strict { Comparator::Strict } else { Comparator::Inclusive };
            let ts = [0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0];
            let rows = threshold_sweep(&fs, &truth, &kb, &ts, EvalOptions { comparator, ..Default::default() }).unwrap();
            for (r, &t) in rows.iter().zip(&ts) {
                let (mut c, mut w) = (0, 0);
                for f in &fs {
                    let passes = if strict { f.top_prob > t } else { f.top_prob >= t };
                    if f.top_class == ClfClass::Noise || !passes {
                        continue;
                    }
                    if kb.countries_for(f.top_class.plug_type().unwrap()).contains(&truth[&f.image_id]) {
                        c += 1;
                    } else {
                        w += 1;
                    }
                }
                prop_assert_eq!((r.correct, r.wrong, r.total), (c, w, c + w));
                if r.total > 0 {
                    prop_assert_eq!(r.accuracy.unwrap(), c as f64 / (c + w) as f64);
                }
            }
            for w in rows.windows(2) {
                prop_assert!(w[0].correct >= w[1].correct && w[0].wrong >= w[1].wrong && w[0].total >= w[1].total);
            }
        }

        #[test]
        fn ranking_is_order_invariant(fs in arb_findings(), t in 0.0f64..1.0, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let kb = KnowledgeBase::bundled_v1();
            let a = rank_candidates(&kb, &fs, t);
            let mut shuffled = fs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&a, &rank_candidates(&kb, &shuffled, t));

            let retained: BTreeSet<String> = apply_threshold(&fs, t).into_iter().map(|f| f.finding_id).collect();
            let covered: BTreeSet<String> = a.iter().flat_map(|c| c.supporting.iter().cloned()).collect();
            prop_assert_eq!(retained, covered);
            prop_assert!(a.iter().all(|c| c.score > 0.0 && !c.supporting.is_empty()));
        }

        #[test]
        fn lowering_threshold_keeps_candidates(fs in arb_findings(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let kb = KnowledgeBase::bundled_v1();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let low: BTreeSet<_> = rank_candidates(&kb, &fs, lo).into_iter().map(|c| c.country).collect();
            let high: BTreeSet<_> = rank_candidates(&kb, &fs, hi).into_iter().map(|c| c.country).collect();
            prop_assert!(high.is_subset(&low));
        }
    }
}
