use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use plugtrace::fixture::{planted_countries, slot_box, StubCorpus};
use plugtrace::geoloc::{threshold_sweep, EvalOptions};
use plugtrace::pipeline::RunOptions;
use plugtrace::vision::interchange::BoxRow;
use plugtrace::{ClfClass, KnowledgeBase, PlugType};
use plugtrace_service::{router, AppState, Event, StateOptions};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    app: Router,
    corpus: StubCorpus,
    token: Option<String>,
}

fn single(image_id: &str, labels: &[(ClfClass, f64)]) -> StubCorpus {
    let mut detections = Vec::new();
    let mut rows = Vec::new();
    for (slot, &(class, p)) in labels.iter().enumerate() {
        let b = slot_box(slot);
        let mk = |class_id, confidence| BoxRow {
            image_id: image_id.to_string(),
            class_id,
            x_min: b[0],
            y_min: b[1],
            x_max: b[2],
            y_max: b[3],
            confidence: Some(confidence),
        };
        detections.push(mk(1, 0.9 - slot as f64 * 0.01));
        rows.push(mk(class.index() as u32, p));
    }
    StubCorpus {
        image_ids: vec![image_id.to_string()],
        detections,
        labels: rows,
        truth: BTreeMap::new(),
    }
}

impl Harness {
    fn with(corpus: StubCorpus, tweak: impl FnOnce(&mut StateOptions)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = StateOptions::new(dir.path().join("data"));
        opts.workers = 4;
        tweak(&mut opts);
        let token = opts.token.clone();
        let state = AppState::new(Arc::new(corpus.detector()), Arc::new(corpus.classifier()), opts).unwrap();
        let app = router(state.clone());
        Self {
            _dir: dir,
            state,
            app,
            corpus,
            token,
        }
    }

    fn new(corpus: StubCorpus) -> Self {
        Self::with(corpus, |_| {})
    }

    fn reopen(&mut self, tweak: impl FnOnce(&mut StateOptions)) {
        let mut opts = StateOptions::new(self._dir.path().join("data"));
        tweak(&mut opts);
        self.state = AppState::new(
            Arc::new(self.corpus.detector()),
            Arc::new(self.corpus.classifier()),
            opts,
        )
        .unwrap();
        self.app = router(self.state.clone());
    }

    async fn raw(&self, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let ct = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes, ct)
    }

    fn builder(&self, method: Method, uri: &str) -> axum::http::request::Builder {
        let b = Request::builder().method(method).uri(uri);
        match &self.token {
            Some(t) => b.header(header::AUTHORIZATION, format!("Bearer {t}")),
            None => b,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let b = self.builder(method, uri);
        let req = match body {
            Some(v) => b
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(v.to_string()))
                .unwrap(),
            None => b.body(Body::empty()).unwrap(),
        };
        let (status, bytes, _) = self.raw(req).await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, v)
    }

    async fn get(&self, uri: &str) -> Value {
        let (s, v) = self.call(Method::GET, uri, None).await;
        assert_eq!(s, StatusCode::OK, "{uri}: {v}");
        v
    }

    async fn create(&self, body: Value) -> String {
        let (s, v) = self.call(Method::POST, "/cases", Some(body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["case_id"].as_str().unwrap().to_string()
    }

    fn png(&self, id: &str) -> Vec<u8> {
        let mut out = Vec::new();
        self.corpus
            .render(id)
            .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .unwrap();
        out
    }

    async fn upload(&self, case_id: &str, files: &[(String, Vec<u8>)]) -> Value {
        let boundary = "XBOUNDARYX";
        let mut body = Vec::new();
        for (name, bytes) in files {
            body.extend_from_slice(
                format!(
                    "--{boundary}\r\nContent-Disposition: form-data; name=\"images\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
                )
                .as_bytes(),
            );
            body.extend_from_slice(bytes);
            body.extend_from_slice(b"\r\n");
        }
        body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
        let req = self
            .builder(Method::POST, &format!("/cases/{case_id}/images"))
            .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        let (s, bytes, _) = self.raw(req).await;
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        v
    }

    async fn wait(&self, job: &Value) -> Value {
        let id = job["job_id"].as_str().unwrap();
        let start = Instant::now();
        loop {
            let v = self.get(&format!("/jobs/{id}")).await;
            if v["status"] == "DONE" {
                return v;
            }
            assert!(start.elapsed() < Duration::from_secs(60), "job stuck: {v}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    async fn upload_all(&self, case_id: &str) -> Value {
        let files: Vec<_> = self
            .corpus
            .image_ids
            .iter()
            .map(|id| (format!("{id}.png"), self.png(id)))
            .collect();
        let job = self.upload(case_id, &files).await;
        self.wait(&job).await
    }

    async fn findings(&self, case_id: &str) -> Vec<Value> {
        let v = self.get(&format!("/cases/{case_id}/findings?page_size=1000")).await;
        v["items"].as_array().unwrap().clone()
    }

    async fn candidates(&self, case_id: &str, t: f64) -> Vec<Value> {
        let v = self.get(&format!("/cases/{case_id}/candidates?threshold={t}")).await;
        v["candidates"].as_array().unwrap().clone()
    }
}

fn zero_threshold() -> Value {
    json!({ "det_conf_min": 0.25, "clf_threshold": 0.0, "crop_pad_fraction": 0.1, "nms_iou": 0.5 })
}

fn h() -> ClfClass {
    ClfClass::Plug(PlugType::H)
}

fn countries(cands: &[Value]) -> Vec<String> {
    cands.iter().map(|c| c["country"].as_str().unwrap().to_string()).collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn case_create_fetch_and_validation() {
    let hx = Harness::new(single("a", &[(h(), 0.9)]));
    let (s, created) = hx.call(Method::POST, "/cases", Some(json!({ "title": "Room 12" }))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["case_id"].as_str().unwrap();
    assert_eq!(hx.get(&format!("/cases/{id}")).await, created);
    assert_eq!(created["kb_version"], "v1");
    let other = hx.create(json!({ "title": "second" })).await;
    assert_ne!(other, id);

    let mut cfg = zero_threshold();
    cfg["det_conf_min"] = json!(1.5);
    let (s, err) = hx.call(Method::POST, "/cases", Some(json!({ "title": "bad", "config": cfg }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "validation");
    assert!(err["message"].as_str().unwrap().contains("det_conf_min"));
    assert!(err.get("detail").is_some());

    let (s, err) = hx.call(Method::GET, "/cases/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    let (s, _) = hx.call(Method::POST, "/cases", Some(json!({ "title": "x", "bogus": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = hx.call(Method::POST, "/cases", Some(json!({ "title": "x", "kb_version": "v9" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let page = hx.get("/cases?page=1&page_size=1").await;
    assert_eq!(page["total"], 2);
    assert_eq!(page["items"][0]["case_id"], id);
}

#[tokio::test(flavor = "multi_thread")]
async fn single_image_and_idempotent_resubmit() {
    let hx = Harness::new(single("room1", &[(h(), 0.9)]));
    let id = hx.create(json!({ "title": "t", "config": zero_threshold() })).await;
    let job = hx.upload_all(&id).await;
    assert_eq!(job["images"][0]["status"], "DONE");
    assert_eq!(job["images"][0]["reused"], false);
    let f = hx.findings(&id).await;
    assert_eq!(f.len(), 1);
    assert_eq!(f[0]["finding"]["finding_id"], "room1#0");

    // same bytes under another name: reused, no new findings
    let job2 = hx.upload(&id, &[("copy.png".into(), hx.png("room1"))]).await;
    assert_eq!(job2["images"][0]["reused"], true);
    assert_eq!(job2["images"][0]["image_id"], "room1");
    let job2 = hx.wait(&job2).await;
    assert_eq!(job2["images"][0]["status"], "DONE");
    assert_eq!(hx.findings(&id).await, f);
    assert_eq!(hx.get(&format!("/cases/{id}")).await["image_ids"], json!(["room1"]));

    let c = hx.candidates(&id, 0.5).await;
    assert_eq!(countries(&c), ["IL"]);
    assert_eq!(c[0]["crops"][0]["finding_id"], "room1#0");
    let url = c[0]["crops"][0]["crop_url"].as_str().unwrap();
    let (s, png, ct) = hx.raw(hx.builder(Method::GET, url).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/png"));
    let crop = image::load_from_memory(&png).unwrap();
    assert!(crop.width() > 0 && crop.height() > 0);

    let audit = hx
        .raw(hx.builder(Method::GET, &format!("/cases/{id}/audit")).body(Body::empty()).unwrap())
        .await
        .1;
    assert_eq!(String::from_utf8(audit).unwrap().lines().count(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreadable_payload_is_reported_per_image() {
    let hx = Harness::new(single("good", &[(h(), 0.9)]));
    let id = hx.create(json!({ "title": "t" })).await;
    let job = hx
        .upload(&id, &[("good.png".into(), hx.png("good")), ("bad.png".into(), b"not an image".to_vec())])
        .await;
    let job = hx.wait(&job).await;
    assert_eq!(job["failed"], 1);
    let by_id: BTreeMap<String, Value> = job["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| (i["image_id"].as_str().unwrap().to_string(), i.clone()))
        .collect();
    assert_eq!(by_id["good"]["status"], "DONE");
    assert_eq!(by_id["bad"]["status"], "FAILED");
    assert_eq!(by_id["bad"]["error"]["image_id"], "bad");
    assert_eq!(hx.findings(&id).await.len(), 1);
    let report = hx.get(&format!("/cases/{id}/report")).await;
    assert_eq!(report["errors"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn hundred_image_batch_matches_direct_run() {
    let kb = KnowledgeBase::bundled_v1();
    let hx = Harness::new(planted_countries(&kb, 100));
    let id = hx.create(json!({ "title": "batch", "config": zero_threshold() })).await;
    let files: Vec<_> = hx.corpus.image_ids.iter().map(|i| (format!("{i}.png"), hx.png(i))).collect();
    let mut jobs = Vec::new();
    for chunk in files.chunks(25) {
        jobs.push(hx.upload(&id, chunk).await);
    }
    for j in &jobs {
        assert_eq!(hx.wait(j).await["failed"], 0);
    }
    let served: Vec<Value> = hx.findings(&id).await.into_iter().map(|v| v["finding"].clone()).collect();
    let direct = hx.corpus.run(RunOptions::default()).unwrap();
    assert!(!direct.findings.is_empty());
    let expected = serde_json::to_value(&direct.findings).unwrap().as_array().unwrap().clone();
    assert_eq!(served.len(), expected.len());
    for (a, b) in served.iter().zip(&expected) {
        assert_eq!(a, b);
    }

    // paging is stable and covers everything once
    let mut paged = Vec::new();
    for page in 1.. {
        let v = hx.get(&format!("/cases/{id}/findings?page={page}&page_size=7")).await;
        let items = v["items"].as_array().unwrap();
        if items.is_empty() {
            break;
        }
        paged.extend(items.iter().map(|i| i["finding"].clone()));
    }
    assert_eq!(paged, served);

    let report = hx.get(&format!("/cases/{id}/report")).await;
    assert_eq!(report["funnel"], serde_json::to_value(direct.funnel).unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn overrides_drive_candidates() {
    let c = ClfClass::Plug(PlugType::C);
    let hx = Harness::new(single("img", &[(h(), 0.9), (c, 0.8)]));
    let id = hx.create(json!({ "title": "t", "config": zero_threshold() })).await;
    hx.upload_all(&id).await;
    let f = hx.findings(&id).await;
    let c_id = f
        .iter()
        .find(|v| v["finding"]["top_class"] == "C")
        .map(|v| v["finding"]["finding_id"].as_str().unwrap().to_string())
        .unwrap();
    let h_id = f
        .iter()
        .find(|v| v["finding"]["top_class"] == "H")
        .map(|v| v["finding"]["finding_id"].as_str().unwrap().to_string())
        .unwrap();
    let original = hx.get(&format!("/cases/{id}/candidates?threshold=0.5")).await;
    let kb = KnowledgeBase::bundled_v1();

    let post = |body: Value| {
        let uri = format!("/cases/{id}/overrides");
        let hx = &hx;
        async move { hx.call(Method::POST, &uri, Some(body)).await }
    };

    let (s, view) = post(json!({ "finding_id": h_id, "action": "MARK_NOISE", "actor": "ana" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["effective_status"], "NOISE");
    assert_eq!(view["finding"]["top_class"], "H");
    for cand in hx.candidates(&id, 0.5).await {
        assert!(!cand["supporting"].as_array().unwrap().contains(&json!(h_id)));
    }
    for cand in hx.candidates(&id, 0.5).await {
        assert!(!cand["plug_types"].as_array().unwrap().contains(&json!("H")));
    }

    let (s, view) = post(json!({ "finding_id": c_id, "action": "SET_CLASS", "class": "G" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["effective_class"], "G");
    let got: Vec<String> = countries(&hx.candidates(&id, 0.5).await);
    let want: Vec<String> = {
        let mut v: Vec<String> = kb.countries_for(PlugType::G).iter().map(|c| c.to_string()).collect();
        v.sort();
        v
    };
    let mut sorted = got.clone();
    sorted.sort();
    assert_eq!(sorted, want);

    post(json!({ "finding_id": h_id, "action": "SET_CLASS", "class": "A" })).await;
    post(json!({ "finding_id": h_id, "action": "RESTORE" })).await;
    post(json!({ "finding_id": c_id, "action": "RESTORE" })).await;
    let restored = hx.get(&format!("/cases/{id}/candidates?threshold=0.5")).await;
    assert_eq!(restored, original);
    let view = hx.get(&format!("/cases/{id}/findings/{}", h_id.replace('#', "%23"))).await;
    assert_eq!(view["effective_class"], "H");
    assert_eq!(view["override_count"], 3);
    assert_eq!(hx.get(&format!("/cases/{id}/overrides")).await.as_array().unwrap().len(), 5);

    let (s, err) = post(json!({ "finding_id": "img#99", "action": "MARK_NOISE" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    let (s, _) = post(json!({ "finding_id": h_id, "action": "SET_CLASS", "class": "Z" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let valid = hx.get(&format!("/cases/{id}/findings?status=VALID")).await;
    assert_eq!(valid["total"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn candidate_thresholds() {
    let kb = KnowledgeBase::bundled_v1();
    let hx = Harness::new(planted_countries(&kb, 12));
    let id = hx.create(json!({ "title": "t", "config": zero_threshold() })).await;
    hx.upload_all(&id).await;
    assert!(hx.candidates(&id, 1.0).await.is_empty());
    let mut prev: Vec<String> = Vec::new();
    for t in [0.95, 0.9, 0.8, 0.6, 0.4, 0.2, 0.0] {
        let now = countries(&hx.candidates(&id, t).await);
        for c in &prev {
            assert!(now.contains(c), "{c} dropped when lowering to {t}");
        }
        prev = now;
    }
    assert!(!prev.is_empty());
    let (s, _) = hx.call(Method::GET, &format!("/cases/{id}/candidates?threshold=2"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = hx.call(Method::GET, &format!("/cases/{id}/candidates?threshold=abc"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn report_is_deterministic_and_consistent() {
    let kb = KnowledgeBase::bundled_v1();
    let corpus = planted_countries(&kb, 10);
    let truth: BTreeMap<String, String> = corpus.truth.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
    let hx = Harness::new(corpus);
    let id = hx
        .create(json!({ "title": "t", "config": zero_threshold(), "truth": truth, "report_thresholds": [0.9, 0.0, 0.7] }))
        .await;
    hx.upload_all(&id).await;
    let uri = format!("/cases/{id}/report");
    let fetch = || async { hx.raw(hx.builder(Method::GET, &uri).body(Body::empty()).unwrap()).await.1 };
    let a = fetch().await;
    let b = fetch().await;
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["kb_version"], "v1");
    assert_eq!(report["backends"].as_array().unwrap().len(), 2);

    for list in report["candidates"].as_array().unwrap() {
        let t = list["threshold"].as_f64().unwrap();
        let live = hx.get(&format!("/cases/{id}/candidates?threshold={t}")).await;
        assert_eq!(list, &live);
    }
    let findings: Vec<plugtrace::pipeline::SocketFinding> = report["findings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| serde_json::from_value(v["finding"].clone()).unwrap())
        .collect();
    let expect = threshold_sweep(&findings, &hx.corpus.truth, &kb, &[0.0, 0.7, 0.9], EvalOptions::default()).unwrap();
    assert_eq!(report["sweep"], serde_json::to_value(&expect).unwrap());
    assert!(expect[0].total > 0);
    assert!(report["csv"]["sweep"].as_str().unwrap().starts_with("threshold,correct,wrong,total,accuracy\n"));
    assert_eq!(
        report["csv"]["findings"].as_str().unwrap().lines().count(),
        findings.len() + 1
    );

    // an override changes the bundle, and the change is visible in it
    let fid = findings[0].finding_id.clone();
    hx.call(Method::POST, &format!("/cases/{id}/overrides"), Some(json!({ "finding_id": fid, "action": "MARK_NOISE" })))
        .await;
    let c = fetch().await;
    assert_ne!(a, c);
    assert_eq!(c, fetch().await);
}

#[tokio::test(flavor = "multi_thread")]
async fn bearer_token_guards_case_routes() {
    let mut hx = Harness::with(single("a", &[(h(), 0.9)]), |o| o.token = Some("s3cret".into()));
    hx.create(json!({ "title": "ok" })).await;
    hx.token = None;
    let (s, err) = hx.call(Method::GET, "/cases", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(err["code"], "unauthorized");
    hx.token = Some("wrong".into());
    assert_eq!(hx.call(Method::GET, "/cases", None).await.0, StatusCode::UNAUTHORIZED);
    hx.token = None;
    let health = hx.get("/healthz").await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["kb_versions"], json!(["v1"]));
    let geo = hx.get("/boundaries").await;
    assert_eq!(geo["type"], "FeatureCollection");
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_resumes_and_keeps_pinned_kb() {
    // a second KB version in which H belongs to France
    let mut doc: Value = serde_json::from_str(&KnowledgeBase::bundled_v1().to_json_string()).unwrap();
    doc["version"] = json!("test-2");
    doc["entries"]["H"] = json!([{ "country": "FR", "source": "test" }]);
    let custom = KnowledgeBase::from_json_str(&doc.to_string()).unwrap();

    let mut hx = Harness::with(single("a", &[(h(), 0.9)]), |o| o.kbs = vec![custom]);
    let id = hx.create(json!({ "title": "t" })).await;
    assert_eq!(hx.get(&format!("/cases/{id}")).await["kb_version"], "test-2");
    hx.upload_all(&id).await;
    assert!(countries(&hx.candidates(&id, 0.5).await).contains(&"FR".to_string()));
    let before = hx.get(&format!("/cases/{id}/report")).await;

    // an image stored but never processed, as after a crash
    let bytes = hx.png("a");
    let mut tweaked = image::load_from_memory(&bytes).unwrap().to_rgb8();
    tweaked.put_pixel(0, 0, image::Rgb([1, 2, 3]));
    let mut other = Vec::new();
    tweaked.write_to(&mut Cursor::new(&mut other), image::ImageFormat::Png).unwrap();
    let sha = hx.state.store.blobs().put(&other).unwrap();
    hx.state
        .store
        .commit(|_| {
            Ok::<_, plugtrace_service::StoreError>((
                vec![Event::ImageAdded {
                    case_id: id.clone(),
                    image_id: "late".into(),
                    sha256: sha.clone(),
                    filename: None,
                }],
                (),
            ))
        })
        .unwrap();

    // reopen without the custom KB file: the case keeps its pinned copy
    hx.reopen(|_| {});
    assert_eq!(hx.state.queued(), 1);
    assert_eq!(hx.state.resume(), 1);
    let start = Instant::now();
    while hx.state.queued() > 0 {
        assert!(start.elapsed() < Duration::from_secs(30));
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let images = hx.get(&format!("/cases/{id}/images")).await;
    assert_eq!(images.as_array().unwrap().len(), 2);
    let after = hx.get(&format!("/cases/{id}/report")).await;
    assert_eq!(after["kb_version"], "test-2");
    assert_eq!(after["case"]["created_at"], before["case"]["created_at"]);
    assert!(countries(&hx.candidates(&id, 0.5).await).contains(&"FR".to_string()));
    let (s, _) = hx.call(Method::POST, "/cases", Some(json!({ "title": "x", "kb_version": "test-2" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn static_assets_are_served() {
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>ui</html>").unwrap();
    std::fs::create_dir(assets.path().join("assets")).unwrap();
    std::fs::write(assets.path().join("assets/app.js"), "console.log(1)").unwrap();
    let root = assets.path().to_path_buf();
    let hx = Harness::with(single("a", &[(h(), 0.9)]), |o| o.static_dir = Some(root));
    let hx = &hx;
    let get = |uri: &'static str| async move { hx.raw(Request::get(uri).body(Body::empty()).unwrap()).await };
    let (s, body, ct) = get("/").await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, &b"<html>ui</html>"[..]));
    assert!(ct.unwrap().starts_with("text/html"));
    let (s, _, ct) = get("/assets/app.js").await;
    assert_eq!(s, StatusCode::OK);
    assert!(ct.unwrap().starts_with("text/javascript"));
    assert_eq!(get("/cases-view/12").await.1, b"<html>ui</html>");
    assert_eq!(get("/missing.css").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get("/../Cargo.toml").await.0, StatusCode::NOT_FOUND);
}
