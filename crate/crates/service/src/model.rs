//! Case records, review overrides and journal events.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use plugtrace::pipeline::{
    assign_status, AuditRecord, BackendDescriptor, FindingStatus, Funnel, ImageFailure, PipelineConfig, SocketFinding,
};
use plugtrace::{ClfClass, CountryCode};
use serde::{Deserialize, Serialize};

pub const DEFAULT_REPORT_THRESHOLDS: [f64; 4] = [0.0, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub title: String,
    pub created_at: DateTime<Utc>,
    /// Submission order.
    pub image_ids: Vec<String>,
    pub config: PipelineConfig,
    pub kb_version: String,
    /// Hash of the KB document stored in the blob directory.
    pub kb_sha256: String,
    pub report_thresholds: Vec<f64>,
    /// Known image locations, used only for report sweeps.
    #[serde(default)]
    pub truth: BTreeMap<String, CountryCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OverrideAction {
    MarkNoise,
    SetClass { class: ClfClass },
    Restore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewOverride {
    pub finding_id: String,
    #[serde(flatten)]
    pub action: OverrideAction,
    pub actor: String,
    pub at: DateTime<Utc>,
}

/// Applies the latest override to a pipeline finding.
///
/// The top probability is kept, so thresholds still apply to relabeled findings.
pub fn effective_finding(f: &SocketFinding, latest: Option<&ReviewOverride>, clf_threshold: f64) -> SocketFinding {
    let mut out = f.clone();
    match latest.map(|o| &o.action) {
        None | Some(OverrideAction::Restore) => {}
        Some(OverrideAction::MarkNoise) => {
            out.top_class = ClfClass::Noise;
            out.status = FindingStatus::Noise;
        }
        Some(OverrideAction::SetClass { class }) => {
            out.top_class = *class;
            out.status = assign_status(*class, f.top_prob, clf_threshold);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobImage {
    pub image_id: String,
    pub sha256: String,
    /// Identical bytes were already in the case; nothing was reprocessed.
    pub reused: bool,
}

/// Result of running the pipeline on one stored image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Processed {
    pub detector: BackendDescriptor,
    pub classifier: BackendDescriptor,
    pub findings: Vec<SocketFinding>,
    pub audit: Vec<AuditRecord>,
    pub error: Option<ImageFailure>,
    pub funnel: Funnel,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CaseCreated {
        case: Case,
    },
    TruthSet {
        case_id: String,
        truth: BTreeMap<String, CountryCode>,
    },
    ImageAdded {
        case_id: String,
        image_id: String,
        sha256: String,
        filename: Option<String>,
    },
    JobCreated {
        job_id: String,
        case_id: String,
        created_at: DateTime<Utc>,
        images: Vec<JobImage>,
    },
    ImageProcessed {
        case_id: String,
        image_id: String,
        #[serde(flatten)]
        result: Processed,
    },
    OverrideAdded {
        case_id: String,
        #[serde(rename = "override")]
        review: ReviewOverride,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImageStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobImageView {
    pub image_id: String,
    pub sha256: String,
    pub reused: bool,
    pub status: ImageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ImageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub case_id: String,
    pub created_at: DateTime<Utc>,
    /// PENDING or RUNNING while any image is unfinished, DONE afterwards.
    pub status: ImageStatus,
    pub failed: usize,
    pub images: Vec<JobImageView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub image_id: String,
    pub sha256: String,
    pub filename: Option<String>,
    pub status: ImageStatus,
    pub findings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ImageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingView {
    /// Pipeline output, never modified.
    pub finding: SocketFinding,
    pub effective_class: ClfClass,
    pub effective_status: FindingStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latest_override: Option<ReviewOverride>,
    pub override_count: usize,
    pub crop_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRef {
    pub finding_id: String,
    pub image_id: String,
    pub crop_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub country: CountryCode,
    pub name: String,
    pub score: f64,
    pub supporting: Vec<String>,
    pub plug_types: Vec<plugtrace::PlugType>,
    pub intersection: bool,
    pub crops: Vec<CropRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub case_id: String,
    pub threshold: f64,
    pub kb_version: String,
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCsv {
    pub findings: String,
    pub candidates: String,
    pub sweep: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: Case,
    pub kb_version: String,
    pub kb_sha256: String,
    pub backends: Vec<BackendDescriptor>,
    pub funnel: Funnel,
    pub errors: Vec<ImageFailure>,
    pub findings: Vec<FindingView>,
    pub overrides: Vec<ReviewOverride>,
    pub candidates: Vec<CandidateList>,
    pub sweep: Vec<plugtrace::geoloc::SweepRow>,
    pub csv: ReportCsv,
}

pub(crate) fn crop_url(case_id: &str, finding_id: &str) -> String {
    format!("/cases/{case_id}/findings/{}/crop", finding_id.replace('#', "%23"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use plugtrace::pipeline::ClassProbs;
    use plugtrace::vision::BBox;
    use plugtrace::PlugType;

    fn finding() -> SocketFinding {
        let mut p = [0.0; 13];
        p[2] = 0.8;
        p[12] = 0.2;
        SocketFinding::new(
            "a#0".into(),
            "a".into(),
            BBox::new(0.0, 0.0, 4.0, 4.0).unwrap(),
            0.9,
            ClassProbs::new(p).unwrap(),
            0.5,
        )
    }

    fn ov(action: OverrideAction) -> ReviewOverride {
        ReviewOverride {
            finding_id: "a#0".into(),
            action,
            actor: "t".into(),
            at: DateTime::from_timestamp(0, 0).unwrap(),
        }
    }

    #[test]
    fn override_wire_format() {
        let o = ov(OverrideAction::SetClass {
            class: ClfClass::Plug(PlugType::G),
        });
        let v = serde_json::to_value(&o).unwrap();
        assert_eq!(v["action"], "SET_CLASS");
        assert_eq!(v["class"], "G");
        assert_eq!(serde_json::from_value::<ReviewOverride>(v).unwrap(), o);
        let v = serde_json::to_value(ov(OverrideAction::MarkNoise)).unwrap();
        assert_eq!(v["action"], "MARK_NOISE");
    }

    #[test]
    fn effective_views() {
        let f = finding();
        assert_eq!(effective_finding(&f, None, 0.5), f);
        assert_eq!(effective_finding(&f, Some(&ov(OverrideAction::Restore)), 0.5), f);
        let n = effective_finding(&f, Some(&ov(OverrideAction::MarkNoise)), 0.5);
        assert_eq!((n.top_class, n.status), (ClfClass::Noise, FindingStatus::Noise));
        let g = effective_finding(
            &f,
            Some(&ov(OverrideAction::SetClass {
                class: ClfClass::Plug(PlugType::G),
            })),
            0.9,
        );
        assert_eq!(g.top_class, ClfClass::Plug(PlugType::G));
        assert_eq!(g.status, FindingStatus::BelowThreshold);
        assert_eq!(g.top_prob, f.top_prob);
    }
}
