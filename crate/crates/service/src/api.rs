//! Routes and handlers.

use std::collections::BTreeMap;
use std::path::{Component, Path as FsPath};
use std::sync::{Arc, LazyLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use plugtrace::ingest::CountryBoundaries;
use plugtrace::pipeline::FindingStatus;
use serde::Deserialize;

use crate::app::{AppState, CreateCase, OverrideRequest, Upload};
use crate::error::ApiError;

type S = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    r.map(|Query(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

fn typed(content_type: &'static str, bytes: impl Into<axum::body::Body>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], bytes.into()).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/cases", post(create_case).get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/truth", put(set_truth))
        .route("/cases/{id}/images", post(submit_images).get(list_images))
        .route("/cases/{id}/images/{image_id}", get(image_blob))
        .route("/cases/{id}/findings", get(list_findings))
        .route("/cases/{id}/findings/{finding_id}", get(get_finding))
        .route("/cases/{id}/findings/{finding_id}/crop", get(get_crop))
        .route("/cases/{id}/overrides", post(add_override).get(list_overrides))
        .route("/cases/{id}/candidates", get(candidates))
        .route("/cases/{id}/report", get(report))
        .route("/cases/{id}/audit", get(audit))
        .route("/jobs/{job_id}", get(job))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let open = Router::new()
        .route("/healthz", get(health))
        .route("/boundaries", get(boundaries))
        .route("/kb", get(kb_versions))
        .route("/kb/{version}", get(kb_document));
    api.merge(open)
        .fallback(static_files)
        .layer(DefaultBodyLimit::max(state.max_upload_bytes))
        .with_state(state)
}

async fn require_token(State(st): S, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

async fn health(State(st): S) -> Response {
    let (status, body) = st.health();
    (status, Json(body)).into_response()
}

static BOUNDARIES: LazyLock<Vec<u8>> =
    LazyLock::new(|| serde_json::to_vec(&CountryBoundaries::bundled().to_geojson()).expect("geojson serializes"));

async fn boundaries() -> Response {
    typed("application/geo+json", BOUNDARIES.as_slice())
}

async fn kb_versions(State(st): S) -> Json<Vec<String>> {
    Json(st.kb_versions())
}

async fn kb_document(State(st): S, Path(version): Path<String>) -> ApiResult<Response> {
    Ok(typed("application/json", st.kb_document(&version)?))
}

async fn create_case(State(st): S, req: Result<Json<CreateCase>, JsonRejection>) -> ApiResult<Response> {
    let case = st.create_case(body(req)?)?;
    Ok((StatusCode::CREATED, Json(case)).into_response())
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_cases(State(st): S, q: Result<Query<PageQuery>, QueryRejection>) -> ApiResult<Response> {
    let q = query(q)?;
    Ok(Json(st.list_cases(q.page, q.page_size)?).into_response())
}

async fn get_case(State(st): S, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.get_case(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthBody {
    truth: BTreeMap<String, String>,
}

async fn set_truth(State(st): S, Path(id): Path<String>, req: Result<Json<TruthBody>, JsonRejection>) -> ApiResult<Response> {
    Ok(Json(st.set_truth(&id, &body(req)?.truth)?).into_response())
}

async fn submit_images(State(st): S, Path(id): Path<String>, mut mp: Multipart) -> ApiResult<Response> {
    let mut uploads = Vec::new();
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::validation(format!("multipart: {}", e.body_text())))?
    {
        let filename = field.file_name().map(str::to_string);
        if filename.is_none() && field.content_type().is_none() {
            // plain form fields carry no image
            continue;
        }
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::validation(format!("multipart: {}", e.body_text())))?;
        uploads.push(Upload {
            filename,
            bytes: bytes.to_vec(),
        });
    }
    let job = st.submit_images(&id, uploads)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn list_images(State(st): S, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.images(&id)?).into_response())
}

async fn image_blob(State(st): S, Path((id, image_id)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(typed("application/octet-stream", st.image_bytes(&id, &image_id)?))
}

#[derive(Debug, Deserialize)]
struct FindingsQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_findings(State(st): S, Path(id): Path<String>, q: Result<Query<FindingsQuery>, QueryRejection>) -> ApiResult<Response> {
    let q = query(q)?;
    let status = match q.status.as_deref().filter(|s| !s.is_empty()) {
        Some(s) => Some(s.parse::<FindingStatus>().map_err(ApiError::validation)?),
        None => None,
    };
    Ok(Json(st.findings(&id, status, q.page, q.page_size)?).into_response())
}

async fn get_finding(State(st): S, Path((id, fid)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(st.finding(&id, &fid)?).into_response())
}

async fn get_crop(State(st): S, Path((id, fid)): Path<(String, String)>) -> ApiResult<Response> {
    let png = tokio::task::spawn_blocking(move || st.crop_png(&id, &fid))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(typed("image/png", png))
}

async fn add_override(State(st): S, Path(id): Path<String>, req: Result<Json<OverrideRequest>, JsonRejection>) -> ApiResult<Response> {
    Ok(Json(st.add_override(&id, body(req)?)?).into_response())
}

async fn list_overrides(State(st): S, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.overrides(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct CandidatesQuery {
    threshold: Option<f64>,
}

async fn candidates(State(st): S, Path(id): Path<String>, q: Result<Query<CandidatesQuery>, QueryRejection>) -> ApiResult<Response> {
    let t = query(q)?.threshold.unwrap_or(0.0);
    Ok(Json(st.candidates(&id, t)?).into_response())
}

async fn report(State(st): S, Path(id): Path<String>) -> ApiResult<Response> {
    let r = st.report(&id)?;
    let bytes = serde_json::to_vec_pretty(&r).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(typed("application/json", bytes))
}

async fn audit(State(st): S, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(typed("application/x-ndjson", st.audit_jsonl(&id)?))
}

async fn job(State(st): S, Path(job_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.job(&job_id)?).into_response())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Serves the web client's built assets; unknown extensionless paths get
/// `index.html` so client-side routes survive a reload.
async fn static_files(State(st): S, method: Method, uri: Uri, _headers: HeaderMap) -> ApiResult<Response> {
    let not_found = || ApiError::not_found("route", uri.path());
    let Some(root) = st.static_dir.clone() else {
        return Err(not_found());
    };
    if method != Method::GET && method != Method::HEAD {
        return Err(not_found());
    }
    let rel = FsPath::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(not_found());
    }
    let mut path = root.join(rel);
    if path.is_dir() {
        path = path.join("index.html");
    }
    if !path.is_file() && rel.extension().is_none() {
        path = root.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(typed(content_type(&path), bytes)),
        Err(_) => Err(not_found()),
    }
}
