//! Case operations behind the HTTP layer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use chrono::Utc;
use plugtrace::geoloc::{self, rank_candidates, EvalOptions};
use plugtrace::ingest::standardize_name;
use plugtrace::pipeline::{
    self, crop, load_classifier, load_detector, run_pipeline_with, BackendConfig, BackendDescriptor, ClassifierBackend,
    DetectorBackend, FindingStatus, Funnel, ImageFailure, ImageRef, PipelineConfig, RunOptions, SocketFinding,
};
use plugtrace::{CountryCode, KnowledgeBase};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::model::*;
use crate::store::{CaseState, Store};

pub const MAX_PAGE_SIZE: usize = 1000;
pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCase {
    pub title: String,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
    #[serde(default)]
    pub kb_version: Option<String>,
    #[serde(default)]
    pub report_thresholds: Option<Vec<f64>>,
    /// Image id to country code or name.
    #[serde(default)]
    pub truth: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct OverrideRequest {
    pub finding_id: String,
    #[serde(flatten)]
    pub action: OverrideAction,
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Upload {
    pub filename: Option<String>,
    pub bytes: Vec<u8>,
}

/// Everything besides backends needed to build an [`AppState`].
#[derive(Debug, Clone)]
pub struct StateOptions {
    pub data_dir: PathBuf,
    /// Extra KBs; the first becomes the default for new cases.
    pub kbs: Vec<KnowledgeBase>,
    pub token: Option<String>,
    pub workers: usize,
    pub static_dir: Option<PathBuf>,
    pub report_thresholds: Vec<f64>,
    pub max_upload_bytes: usize,
}

impl StateOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let c = ServiceConfig::new(data_dir.into(), "", "");
        Self {
            data_dir: c.data_dir,
            kbs: Vec::new(),
            token: None,
            workers: c.workers,
            static_dir: None,
            report_thresholds: c.report_thresholds,
            max_upload_bytes: c.max_upload_bytes,
        }
    }
}

struct Kbs {
    /// Version to document hash.
    available: BTreeMap<String, String>,
    default: String,
    cache: Mutex<HashMap<String, Arc<KnowledgeBase>>>,
}

pub struct AppState {
    pub store: Store,
    det: Arc<dyn DetectorBackend>,
    clf: Arc<dyn ClassifierBackend>,
    kbs: Kbs,
    workers: Arc<Semaphore>,
    running: Mutex<HashSet<(String, String)>>,
    pub(crate) token: Option<String>,
    pub(crate) static_dir: Option<PathBuf>,
    report_thresholds: Vec<f64>,
    pub(crate) max_upload_bytes: usize,
}

fn page_bounds(total: usize, page: Option<usize>, size: Option<usize>) -> Result<(usize, usize, std::ops::Range<usize>), ApiError> {
    let page = page.unwrap_or(1);
    let size = size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 {
        return Err(ApiError::validation("page starts at 1"));
    }
    if size == 0 || size > MAX_PAGE_SIZE {
        return Err(ApiError::validation(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let start = ((page - 1).saturating_mul(size)).min(total);
    Ok((page, size, start..(start + size).min(total)))
}

fn check_thresholds(ts: &[f64]) -> Result<Vec<f64>, ApiError> {
    if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(ApiError::validation(format!("threshold {t} outside [0, 1]")));
    }
    let mut out = ts.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Image id from an upload's file name: the stem with unsafe characters replaced.
pub fn image_id_from_filename(filename: Option<&str>, sha: &str) -> String {
    let stem = filename
        .map(|f| f.rsplit(['/', '\\']).next().unwrap_or(f))
        .map(|f| f.rsplit_once('.').map(|(s, _)| s).unwrap_or(f))
        .unwrap_or("");
    let id: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    let id = id.trim_matches('.').to_string();
    if id.is_empty() {
        format!("img-{}", &sha[..12])
    } else {
        id
    }
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Arc<Self>, String> {
        cfg.validate()?;
        let det_cfg = BackendConfig::load(&cfg.detector).map_err(|e| e.to_string())?;
        let clf_cfg = BackendConfig::load(&cfg.classifier).map_err(|e| e.to_string())?;
        let det = load_detector(&det_cfg).map_err(|e| e.to_string())?;
        let clf = load_classifier(&clf_cfg).map_err(|e| e.to_string())?;
        let kbs = cfg
            .kb
            .iter()
            .map(|p| KnowledgeBase::load(p).map_err(|e| format!("{}: {e}", p.display())))
            .collect::<Result<Vec<_>, _>>()?;
        let opts = StateOptions {
            data_dir: cfg.data_dir.clone(),
            kbs,
            token: cfg.token.clone(),
            workers: cfg.workers,
            static_dir: cfg.static_dir.clone(),
            report_thresholds: cfg.report_thresholds.clone(),
            max_upload_bytes: cfg.max_upload_bytes,
        };
        Self::new(Arc::from(det), Arc::from(clf), opts)
    }

    /// Probes both backends, opens the store and registers the KBs.
    pub fn new(
        det: Arc<dyn DetectorBackend>,
        clf: Arc<dyn ClassifierBackend>,
        opts: StateOptions,
    ) -> Result<Arc<Self>, String> {
        pipeline::probe_backends(det.as_ref(), clf.as_ref()).map_err(|e| e.to_string())?;
        if opts.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        let store = Store::open(&opts.data_dir).map_err(|e| e.to_string())?;
        let mut available = BTreeMap::new();
        let mut cache = HashMap::new();
        let mut register = |kb: KnowledgeBase| -> Result<String, String> {
            let sha = store.blobs().put(kb.to_json_string().as_bytes()).map_err(|e| e.to_string())?;
            let version = kb.version().to_string();
            available.insert(version.clone(), sha.clone());
            cache.insert(sha, Arc::new(kb));
            Ok(version)
        };
        // explicit files replace the bundled KB of the same version
        let mut default = register(KnowledgeBase::bundled_v1())?;
        let mut explicit = HashSet::new();
        for (i, kb) in opts.kbs.into_iter().enumerate() {
            let v = register(kb)?;
            if !explicit.insert(v.clone()) {
                return Err(format!("two KB files declare version {v}"));
            }
            if i == 0 {
                default = v;
            }
        }
        Ok(Arc::new(Self {
            store,
            det,
            clf,
            kbs: Kbs {
                available,
                default,
                cache: Mutex::new(cache),
            },
            workers: Arc::new(Semaphore::new(opts.workers)),
            running: Mutex::new(HashSet::new()),
            token: opts.token,
            static_dir: opts.static_dir,
            report_thresholds: check_thresholds(&opts.report_thresholds).map_err(|e| e.message)?,
            max_upload_bytes: opts.max_upload_bytes,
        }))
    }

    /// Requeues images stored before a restart but never processed.
    pub fn resume(self: &Arc<Self>) -> usize {
        let todo = self.store.read(|s| s.unprocessed());
        let n = todo.len();
        for (c, i) in todo {
            self.enqueue(c, i);
        }
        n
    }

    /// Images stored and not yet processed.
    pub fn queued(&self) -> usize {
        self.store.read(|s| s.unprocessed().len())
    }

    fn with_case<T>(&self, case_id: &str, f: impl FnOnce(&CaseState) -> T) -> Result<T, ApiError> {
        self.store.read(|s| s.cases.get(case_id).map(f)).ok_or_else(|| ApiError::not_found("case", case_id))
    }

    fn kb_for(&self, case: &Case) -> Result<Arc<KnowledgeBase>, ApiError> {
        let mut cache = self.kbs.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(kb) = cache.get(&case.kb_sha256) {
            return Ok(kb.clone());
        }
        let bytes = self.store.blobs().get(&case.kb_sha256)?;
        let text = String::from_utf8(bytes).map_err(|e| ApiError::internal(format!("pinned KB: {e}")))?;
        let kb = KnowledgeBase::from_json_str(&text).map_err(|e| ApiError::internal(format!("pinned KB: {e}")))?;
        let kb = Arc::new(kb);
        cache.insert(case.kb_sha256.clone(), kb.clone());
        Ok(kb)
    }

    pub fn kb_versions(&self) -> Vec<String> {
        self.kbs.available.keys().cloned().collect()
    }

    pub fn kb_document(&self, version: &str) -> Result<Vec<u8>, ApiError> {
        let sha = self.kbs.available.get(version).ok_or_else(|| ApiError::not_found("kb", version))?;
        Ok(self.store.blobs().get(sha)?)
    }

    pub fn health(&self) -> (StatusCode, Value) {
        let probe = pipeline::probe_backends(self.det.as_ref(), self.clf.as_ref());
        let body = json!({
            "status": if probe.is_ok() { "ok" } else { "unhealthy" },
            "error": probe.as_ref().err().map(|e| e.to_string()),
            "detector": self.det.descriptor(),
            "classifier": self.clf.descriptor(),
            "kb_versions": self.kb_versions(),
            "default_kb_version": self.kbs.default,
            "cases": self.store.read(|s| s.cases.len()),
            "queued": self.queued(),
        });
        let status = if probe.is_ok() { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
        (status, body)
    }

    fn parse_truth(raw: &BTreeMap<String, String>) -> Result<BTreeMap<String, CountryCode>, ApiError> {
        raw.iter()
            .map(|(id, c)| {
                standardize_name(c)
                    .map(|code| (id.clone(), code))
                    .map_err(|e| ApiError::validation(format!("truth for {id}: {e}")))
            })
            .collect()
    }

    pub fn create_case(&self, req: CreateCase) -> Result<Case, ApiError> {
        let title = req.title.trim().to_string();
        if title.is_empty() {
            return Err(ApiError::validation("title must not be empty"));
        }
        let config = req.config.unwrap_or_default();
        config
            .validate()
            .map_err(|e| ApiError::validation(e.to_string()).with_detail(json!({ "field": "config" })))?;
        let kb_version = req.kb_version.unwrap_or_else(|| self.kbs.default.clone());
        let kb_sha256 = self
            .kbs
            .available
            .get(&kb_version)
            .cloned()
            .ok_or_else(|| ApiError::validation(format!("unknown KB version {kb_version}")).with_detail(json!({ "available": self.kb_versions() })))?;
        let report_thresholds = match req.report_thresholds {
            Some(ts) => check_thresholds(&ts)?,
            None => self.report_thresholds.clone(),
        };
        let truth = Self::parse_truth(&req.truth)?;
        self.store.commit(|s| {
            let case = Case {
                case_id: s.next_case_id(),
                title,
                created_at: Utc::now(),
                image_ids: Vec::new(),
                config,
                kb_version,
                kb_sha256,
                report_thresholds,
                truth,
            };
            Ok::<_, ApiError>((vec![Event::CaseCreated { case: case.clone() }], case))
        })
    }

    pub fn get_case(&self, case_id: &str) -> Result<Case, ApiError> {
        self.with_case(case_id, |c| c.case.clone())
    }

    pub fn list_cases(&self, page: Option<usize>, size: Option<usize>) -> Result<Page<Case>, ApiError> {
        self.store.read(|s| {
            let total = s.cases.len();
            let (page, page_size, range) = page_bounds(total, page, size)?;
            let items = s.cases.values().skip(range.start).take(range.len()).map(|c| c.case.clone()).collect();
            Ok(Page {
                page,
                page_size,
                total,
                items,
            })
        })
    }

    pub fn set_truth(&self, case_id: &str, raw: &BTreeMap<String, String>) -> Result<Case, ApiError> {
        let truth = Self::parse_truth(raw)?;
        self.store.commit(|s| {
            let c = s.cases.get(case_id).ok_or_else(|| ApiError::not_found("case", case_id))?;
            let mut case = c.case.clone();
            case.truth = truth.clone();
            Ok((
                vec![Event::TruthSet {
                    case_id: case_id.to_string(),
                    truth,
                }],
                case,
            ))
        })
    }

    /// Stores the payloads and queues new images for processing.
    ///
    /// Bytes already present in the case reuse the earlier image and its findings.
    pub fn submit_images(self: &Arc<Self>, case_id: &str, uploads: Vec<Upload>) -> Result<JobView, ApiError> {
        if uploads.is_empty() {
            return Err(ApiError::validation("no image payloads in request"));
        }
        self.with_case(case_id, |_| ())?;
        let mut stored = Vec::with_capacity(uploads.len());
        for u in uploads {
            let sha = self.store.blobs().put(&u.bytes)?;
            stored.push((u.filename, sha));
        }
        let (job_id, fresh) = self.store.commit(|s| {
            let c = s.cases.get(case_id).ok_or_else(|| ApiError::not_found("case", case_id))?;
            let mut by_hash: HashMap<&str, String> = c.by_hash.iter().map(|(h, id)| (h.as_str(), id.clone())).collect();
            let mut taken: HashSet<String> = c.images.keys().cloned().collect();
            let mut events = Vec::new();
            let mut images = Vec::new();
            let mut fresh = Vec::new();
            for (filename, sha) in &stored {
                if let Some(id) = by_hash.get(sha.as_str()) {
                    images.push(JobImage {
                        image_id: id.clone(),
                        sha256: sha.clone(),
                        reused: true,
                    });
                    continue;
                }
                let mut id = image_id_from_filename(filename.as_deref(), sha);
                if taken.contains(&id) {
                    id = format!("{id}-{}", &sha[..8]);
                }
                taken.insert(id.clone());
                by_hash.insert(sha, id.clone());
                events.push(Event::ImageAdded {
                    case_id: case_id.to_string(),
                    image_id: id.clone(),
                    sha256: sha.clone(),
                    filename: filename.clone(),
                });
                images.push(JobImage {
                    image_id: id.clone(),
                    sha256: sha.clone(),
                    reused: false,
                });
                fresh.push(id);
            }
            let job_id = s.next_job_id();
            events.push(Event::JobCreated {
                job_id: job_id.clone(),
                case_id: case_id.to_string(),
                created_at: Utc::now(),
                images,
            });
            Ok::<_, ApiError>((events, (job_id, fresh)))
        })?;
        for id in fresh {
            self.enqueue(case_id.to_string(), id);
        }
        self.job(&job_id)
    }

    fn enqueue(self: &Arc<Self>, case_id: String, image_id: String) {
        let st = self.clone();
        tokio::spawn(async move {
            let _permit = st.workers.clone().acquire_owned().await.expect("worker pool is never closed");
            let key = (case_id, image_id);
            st.running.lock().unwrap_or_else(|e| e.into_inner()).insert(key.clone());
            let worker = st.clone();
            let (c, i) = key.clone();
            let res = tokio::task::spawn_blocking(move || worker.process_image(&c, &i)).await;
            st.running.lock().unwrap_or_else(|e| e.into_inner()).remove(&key);
            match res {
                Ok(Ok(())) => {}
                Ok(Err(e)) => log::error!("{} {}: {}", key.0, key.1, e.message),
                Err(e) => log::error!("{} {}: worker panicked: {e}", key.0, key.1),
            }
        });
    }

    fn process_image(&self, case_id: &str, image_id: &str) -> Result<(), ApiError> {
        let (cfg, sha, done) = self.with_case(case_id, |c| {
            let e = &c.images[image_id];
            (c.case.config, e.sha256.clone(), e.processed.is_some())
        })?;
        if done {
            return Ok(());
        }
        let failed = |stage: &str, message: String| Processed {
            detector: self.det.descriptor(),
            classifier: self.clf.descriptor(),
            findings: Vec::new(),
            audit: Vec::new(),
            error: Some(ImageFailure {
                image_id: image_id.to_string(),
                stage: stage.into(),
                message,
            }),
            funnel: Funnel::default(),
        };
        let result = match self.store.blobs().get(&sha).map_err(|e| e.to_string()).and_then(|b| {
            ImageRef::from_bytes(image_id, b).map_err(|e| e.to_string())
        }) {
            Err(message) => failed("load", message),
            Ok(img) => {
                let opts = RunOptions {
                    jobs: None,
                    skip_probe: true,
                };
                match run_pipeline_with(&[img], self.det.as_ref(), self.clf.as_ref(), &cfg, opts) {
                    Ok(run) => Processed {
                        detector: run.detector,
                        classifier: run.classifier,
                        findings: run.findings,
                        audit: run.audit,
                        error: run.errors.into_iter().next(),
                        funnel: run.funnel,
                    },
                    Err(e) => failed("pipeline", e.to_string()),
                }
            }
        };
        self.store.commit(|s| {
            let done = s.cases[case_id].images[image_id].processed.is_some();
            let events = if done {
                vec![]
            } else {
                vec![Event::ImageProcessed {
                    case_id: case_id.to_string(),
                    image_id: image_id.to_string(),
                    result,
                }]
            };
            Ok::<_, ApiError>((events, ()))
        })
    }

    fn image_status(&self, c: &CaseState, image_id: &str) -> (ImageStatus, Option<ImageFailure>) {
        match c.images.get(image_id).and_then(|e| e.processed.as_ref()) {
            Some(p) => match &p.error {
                Some(e) => (ImageStatus::Failed, Some(e.clone())),
                None => (ImageStatus::Done, None),
            },
            None => {
                let running = self.running.lock().unwrap_or_else(|e| e.into_inner());
                if running.contains(&(c.case.case_id.clone(), image_id.to_string())) {
                    (ImageStatus::Running, None)
                } else {
                    (ImageStatus::Pending, None)
                }
            }
        }
    }

    pub fn job(&self, job_id: &str) -> Result<JobView, ApiError> {
        self.store.read(|s| {
            let job = s.jobs.get(job_id).ok_or_else(|| ApiError::not_found("job", job_id))?;
            let c = &s.cases[&job.case_id];
            let images: Vec<JobImageView> = job
                .images
                .iter()
                .map(|ji| {
                    let (status, error) = self.image_status(c, &ji.image_id);
                    JobImageView {
                        image_id: ji.image_id.clone(),
                        sha256: ji.sha256.clone(),
                        reused: ji.reused,
                        status,
                        error,
                    }
                })
                .collect();
            let any = |st: ImageStatus| images.iter().any(|i| i.status == st);
            let status = if any(ImageStatus::Running) {
                ImageStatus::Running
            } else if any(ImageStatus::Pending) {
                ImageStatus::Pending
            } else {
                ImageStatus::Done
            };
            Ok(JobView {
                job_id: job.job_id.clone(),
                case_id: job.case_id.clone(),
                created_at: job.created_at,
                status,
                failed: images.iter().filter(|i| i.status == ImageStatus::Failed).count(),
                images,
            })
        })
    }

    pub fn images(&self, case_id: &str) -> Result<Vec<ImageView>, ApiError> {
        self.with_case(case_id, |c| {
            c.images
                .iter()
                .map(|(id, e)| {
                    let (status, error) = self.image_status(c, id);
                    ImageView {
                        image_id: id.clone(),
                        sha256: e.sha256.clone(),
                        filename: e.filename.clone(),
                        status,
                        findings: e.processed.as_ref().map_or(0, |p| p.findings.len()),
                        error,
                    }
                })
                .collect()
        })
    }

    pub fn image_bytes(&self, case_id: &str, image_id: &str) -> Result<Vec<u8>, ApiError> {
        let sha = self
            .with_case(case_id, |c| c.images.get(image_id).map(|e| e.sha256.clone()))?
            .ok_or_else(|| ApiError::not_found("image", image_id))?;
        Ok(self.store.blobs().get(&sha)?)
    }

    /// Every finding of the case with overrides applied, ordered by image id then rank.
    fn views(c: &CaseState) -> Vec<FindingView> {
        let latest = c.latest_overrides();
        let thr = c.case.config.clf_threshold;
        c.images
            .values()
            .filter_map(|e| e.processed.as_ref())
            .flat_map(|p| p.findings.iter())
            .map(|f| {
                let (o, n) = latest.get(f.finding_id.as_str()).map_or((None, 0), |(o, n)| (Some(*o), *n));
                let eff = effective_finding(f, o, thr);
                FindingView {
                    finding: f.clone(),
                    effective_class: eff.top_class,
                    effective_status: eff.status,
                    latest_override: o.cloned(),
                    override_count: n,
                    crop_url: crop_url(&c.case.case_id, &f.finding_id),
                }
            })
            .collect()
    }

    fn effective(views: &[FindingView]) -> Vec<SocketFinding> {
        views
            .iter()
            .map(|v| SocketFinding {
                top_class: v.effective_class,
                status: v.effective_status,
                ..v.finding.clone()
            })
            .collect()
    }

    pub fn findings(
        &self,
        case_id: &str,
        status: Option<FindingStatus>,
        page: Option<usize>,
        size: Option<usize>,
    ) -> Result<Page<FindingView>, ApiError> {
        let all = self.with_case(case_id, Self::views)?;
        let filtered: Vec<FindingView> = all
            .into_iter()
            .filter(|v| status.is_none_or(|s| v.effective_status == s))
            .collect();
        let (page, page_size, range) = page_bounds(filtered.len(), page, size)?;
        Ok(Page {
            page,
            page_size,
            total: filtered.len(),
            items: filtered[range].to_vec(),
        })
    }

    pub fn finding(&self, case_id: &str, finding_id: &str) -> Result<FindingView, ApiError> {
        self.with_case(case_id, Self::views)?
            .into_iter()
            .find(|v| v.finding.finding_id == finding_id)
            .ok_or_else(|| ApiError::not_found("finding", finding_id))
    }

    /// PNG of the padded crop the classifier saw.
    pub fn crop_png(&self, case_id: &str, finding_id: &str) -> Result<Vec<u8>, ApiError> {
        let v = self.finding(case_id, finding_id)?;
        let (sha, pad) = self.with_case(case_id, |c| {
            (c.images[&v.finding.image_id].sha256.clone(), c.case.config.crop_pad_fraction)
        })?;
        let bytes = self.store.blobs().get(&sha)?;
        let img = ImageRef::from_bytes(v.finding.image_id.clone(), bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let pixels = crop(&img, &v.finding.bbox, pad).map_err(|e| ApiError::internal(e.to_string()))?;
        let mut out = Vec::new();
        pixels
            .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(out)
    }

    pub fn add_override(&self, case_id: &str, req: OverrideRequest) -> Result<FindingView, ApiError> {
        let actor = req.actor.unwrap_or_else(|| "anonymous".into());
        if actor.trim().is_empty() {
            return Err(ApiError::validation("actor must not be blank"));
        }
        self.store.commit(|s| {
            let c = s.cases.get(case_id).ok_or_else(|| ApiError::not_found("case", case_id))?;
            if !c.has_finding(&req.finding_id) {
                return Err(ApiError::not_found("finding", &req.finding_id));
            }
            let review = ReviewOverride {
                finding_id: req.finding_id.clone(),
                action: req.action.clone(),
                actor: actor.clone(),
                at: Utc::now(),
            };
            Ok((
                vec![Event::OverrideAdded {
                    case_id: case_id.to_string(),
                    review,
                }],
                (),
            ))
        })?;
        self.finding(case_id, &req.finding_id)
    }

    pub fn overrides(&self, case_id: &str) -> Result<Vec<ReviewOverride>, ApiError> {
        self.with_case(case_id, |c| c.overrides.clone())
    }

    fn candidate_list(case: &Case, kb: &KnowledgeBase, views: &[FindingView], threshold: f64) -> CandidateList {
        let eff = Self::effective(views);
        let image_of: HashMap<&str, &str> = eff.iter().map(|f| (f.finding_id.as_str(), f.image_id.as_str())).collect();
        let candidates = rank_candidates(kb, &eff, threshold)
            .into_iter()
            .map(|g| CandidateView {
                name: g.country.info().display_name().to_string(),
                crops: g
                    .supporting
                    .iter()
                    .map(|fid| CropRef {
                        finding_id: fid.clone(),
                        image_id: image_of[fid.as_str()].to_string(),
                        crop_url: crop_url(&case.case_id, fid),
                    })
                    .collect(),
                country: g.country,
                score: g.score,
                supporting: g.supporting,
                plug_types: g.plug_types,
                intersection: g.intersection,
            })
            .collect();
        CandidateList {
            case_id: case.case_id.clone(),
            threshold,
            kb_version: case.kb_version.clone(),
            candidates,
        }
    }

    pub fn candidates(&self, case_id: &str, threshold: f64) -> Result<CandidateList, ApiError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApiError::validation(format!("threshold {threshold} outside [0, 1]")));
        }
        let (case, views) = self.with_case(case_id, |c| (c.case.clone(), Self::views(c)))?;
        let kb = self.kb_for(&case)?;
        Ok(Self::candidate_list(&case, &kb, &views, threshold))
    }

    pub fn audit_jsonl(&self, case_id: &str) -> Result<String, ApiError> {
        self.with_case(case_id, |c| {
            let mut out = String::new();
            for r in c.images.values().filter_map(|e| e.processed.as_ref()).flat_map(|p| &p.audit) {
                out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
                out.push('\n');
            }
            out
        })
    }

    pub fn report(&self, case_id: &str) -> Result<CaseReport, ApiError> {
        let (case, views, overrides, processed) = self.with_case(case_id, |c| {
            (
                c.case.clone(),
                Self::views(c),
                c.overrides.clone(),
                c.images.values().filter_map(|e| e.processed.clone()).collect::<Vec<_>>(),
            )
        })?;
        let kb = self.kb_for(&case)?;
        let mut backends = BTreeSet::<BackendDescriptor>::new();
        let mut funnel = Funnel::default();
        let mut errors = Vec::new();
        for p in &processed {
            backends.insert(p.detector.clone());
            backends.insert(p.classifier.clone());
            funnel.add(&p.funnel);
            errors.extend(p.error.clone());
        }
        let candidates: Vec<CandidateList> = case
            .report_thresholds
            .iter()
            .map(|&t| Self::candidate_list(&case, &kb, &views, t))
            .collect();
        let eff = Self::effective(&views);
        let sweep = geoloc::threshold_sweep(&eff, &case.truth, &kb, &case.report_thresholds, EvalOptions::default())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let csv = ReportCsv {
            findings: findings_csv(&views),
            candidates: candidates_csv(&candidates),
            sweep: geoloc::rows_csv(&sweep),
        };
        Ok(CaseReport {
            kb_version: case.kb_version.clone(),
            kb_sha256: case.kb_sha256.clone(),
            case,
            backends: backends.into_iter().collect(),
            funnel,
            errors,
            findings: views,
            overrides,
            candidates,
            sweep,
            csv,
        })
    }
}

fn findings_csv(views: &[FindingView]) -> String {
    let mut out = String::from(
        "finding_id,image_id,x_min,y_min,x_max,y_max,det_conf,top_class,top_prob,status,effective_class,effective_status\n",
    );
    for v in views {
        let f = &v.finding;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            f.finding_id,
            f.image_id,
            f.bbox.x_min,
            f.bbox.y_min,
            f.bbox.x_max,
            f.bbox.y_max,
            f.det_conf,
            f.top_class.as_str(),
            f.top_prob,
            f.status.as_str(),
            v.effective_class.as_str(),
            v.effective_status.as_str()
        );
    }
    out
}

fn candidates_csv(lists: &[CandidateList]) -> String {
    let mut out = String::from("threshold,rank,country,score,supporting,plug_types,intersection\n");
    for l in lists {
        for (i, c) in l.candidates.iter().enumerate() {
            let types: Vec<&str> = c.plug_types.iter().map(|t| t.as_str()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                l.threshold,
                i + 1,
                c.country,
                c.score,
                c.supporting.join(";"),
                types.join(";"),
                c.intersection
            );
        }
    }
    out
}
