//! Route handlers.

use std::collections::HashMap;
use std::io::{Cursor, Write};
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tto::io::{self, Manifest, TrackFile};
use tto::model::{VideoClip, Violation};
use tto::pipeline::PipelineConfig;

use crate::error::{ApiError, ApiResult};
use crate::jobs;
use crate::state::{lock, AppState, Job, JobKind, JobStatus, Session, SessionHandle, TrackMethod};

#[derive(Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub manifest: Manifest,
    pub has_annotations: bool,
    pub methods: Vec<TrackMethod>,
    pub active_job: Option<String>,
    pub job_count: usize,
}

fn summary(s: &Session) -> SessionSummary {
    SessionSummary {
        id: s.id.clone(),
        manifest: s.manifest.clone(),
        has_annotations: s.annotations.is_some(),
        methods: s.results.keys().copied().collect(),
        active_job: s.active_job().map(|j| j.id.clone()),
        job_count: s.jobs.len(),
    }
}

fn find(state: &AppState, id: &str) -> ApiResult<SessionHandle> {
    state
        .session(id)
        .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
}

fn core_error(err: tto::Error) -> ApiError {
    match err {
        tto::Error::Io(e) => ApiError::internal(e),
        other => ApiError::bad_request(other.to_string()),
    }
}

pub async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

// ------------------------------------------------------------- sessions

#[derive(Deserialize)]
struct PathUpload {
    path: PathBuf,
}

/// Accepts either a multipart upload of `frame_XXXXX.png` parts (with
/// optional `fps` and `video_id` text fields) or a JSON body naming a video
/// directory readable by the server.
pub async fn create_session(State(state): State<AppState>, req: Request) -> ApiResult<Response> {
    let is_json = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let clip = if is_json {
        let body = Bytes::from_request(req, &state).await.map_err(IntoResponse::into_response);
        let body = match body {
            Ok(b) => b,
            Err(resp) => return Ok(resp),
        };
        let upload: PathUpload = io::from_json_slice(&body, "request body").map_err(core_error)?;
        let dir = upload.path;
        tokio::task::spawn_blocking(move || io::load_video(&dir))
            .await
            .map_err(ApiError::internal)?
            .map_err(core_error)?
    } else {
        let multipart = match Multipart::from_request(req, &state).await {
            Ok(m) => m,
            Err(rejection) => return Ok(rejection.into_response()),
        };
        match clip_from_multipart(multipart).await {
            Ok(clip) => clip,
            Err(resp) => return Ok(resp),
        }
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let root = state.root();
    let session = tokio::task::spawn_blocking(move || Session::create(&root, id, clip))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    let body = summary(&session);
    log::info!("session {} created ({} frames)", body.id, body.manifest.frame_count);
    state.insert(session);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn clip_from_multipart(mut multipart: Multipart) -> Result<VideoClip, Response> {
    let mut named = Vec::new();
    let mut fps = 30.0;
    let mut video_id = String::from("upload");
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(e.into_response()),
        };
        let field_name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        match (field_name.as_str(), file_name) {
            ("fps", None) => {
                let text = field.text().await.map_err(IntoResponse::into_response)?;
                fps = text
                    .trim()
                    .parse()
                    .ok()
                    .filter(|f: &f64| f.is_finite() && *f > 0.0)
                    .ok_or_else(|| ApiError::bad_request(format!("fps: not a positive number: {text:?}")).into_response())?;
            }
            ("video_id", None) => {
                video_id = field.text().await.map_err(IntoResponse::into_response)?;
            }
            (_, name) => {
                let name = name.unwrap_or(field_name);
                let bytes = field.bytes().await.map_err(IntoResponse::into_response)?;
                named.push((name, bytes.to_vec()));
            }
        }
    }
    if named.is_empty() {
        return Err(ApiError::bad_request("no frames uploaded").into_response());
    }
    tokio::task::spawn_blocking(move || decode_upload(named, fps, video_id))
        .await
        .map_err(|e| ApiError::internal(e).into_response())?
        .map_err(|e| core_error(e).into_response())
}

fn decode_upload(named: Vec<(String, Vec<u8>)>, fps: f64, video_id: String) -> tto::Result<VideoClip> {
    let by_index = io::frames_by_index(named)?;
    let indices: Vec<usize> = by_index.keys().copied().collect();
    io::check_frame_indices(&indices, "upload")?;
    let mut frames = Vec::with_capacity(by_index.len());
    for (_, (name, bytes)) in by_index {
        let frame = io::decode_png(&bytes, &name)?;
        frames.push((name, frame));
    }
    let first = &frames[0].1;
    let manifest = Manifest {
        format_version: io::FORMAT_VERSION,
        video_id,
        width: first.width(),
        height: first.height(),
        fps,
        frame_count: frames.len(),
        frame_pattern: io::FRAME_PATTERN.to_string(),
        channels: first.channels(),
    };
    io::clip_from_frames(&manifest, frames)
}

pub async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    let list = state
        .session_ids()
        .into_iter()
        .filter_map(|id| state.session(&id))
        .map(|h| summary(&lock(&h)))
        .collect();
    Json(list)
}

pub async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    let handle = find(&state, &id)?;
    let body = summary(&lock(&handle));
    Ok(Json(body))
}

pub async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let handle = find(&state, &id)?;
    let dir = {
        let s = lock(&handle);
        if let Some(job) = s.active_job() {
            return Err(ApiError::conflict(format!("job {} is still active", job.id)));
        }
        s.dir().to_path_buf()
    };
    state.remove(&id);
    tokio::task::spawn_blocking(move || std::fs::remove_dir_all(dir))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    log::info!("session {id} deleted");
    Ok(StatusCode::NO_CONTENT)
}

pub async fn get_frame(State(state): State<AppState>, Path((id, index)): Path<(String, usize)>) -> ApiResult<Response> {
    let handle = find(&state, &id)?;
    let path = {
        let s = lock(&handle);
        if index >= s.manifest.frame_count {
            return Err(ApiError::not_found(format!(
                "frame {index} out of range (video has {})",
                s.manifest.frame_count
            )));
        }
        s.video_dir().join(io::frame_file_name(index))
    };
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

// ---------------------------------------------------------- annotations

pub async fn get_annotations(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let handle = find(&state, &id)?;
    let s = lock(&handle);
    let ann = s
        .annotations
        .as_ref()
        .ok_or_else(|| ApiError::not_found(format!("session {id} has no annotations")))?;
    Ok(Json(io::annotations_to_json(ann)))
}

/// Replaces the annotation set. Every invariant violation is reported at once.
pub async fn put_annotations(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let handle = find(&state, &id)?;
    let (ann, mut violations) = match io::parse_annotations(&body, "annotations") {
        Ok(parsed) => parsed,
        Err(tto::Error::Format { location, message }) => {
            return Err(ApiError::unprocessable(
                "annotations do not parse",
                vec![Violation::new(location, message)],
            ))
        }
        Err(e) => return Err(core_error(e)),
    };
    let mut s = lock(&handle);
    if let Some(job) = s.active_job() {
        return Err(ApiError::conflict(format!("job {} is still active", job.id)));
    }
    violations.extend(tto::model::validate_annotations(&s.clip, &ann));
    violations.dedup();
    if !violations.is_empty() {
        return Err(ApiError::unprocessable("annotations violate invariants", violations));
    }
    s.set_annotations(ann).map_err(ApiError::internal)?;
    let ann = s.annotations.as_ref().map(io::annotations_to_json).unwrap_or_default();
    Ok(Json(ann))
}

// ----------------------------------------------------------------- jobs

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub kind: JobKind,
    /// Partial pipeline config merged over the defaults.
    #[serde(default)]
    pub config: Option<Value>,
}

/// Deep-merges `patch` into `base`, refusing keys `base` does not have.
fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<(), Violation> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = format!("{path}.{k}");
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| Violation::new(here.clone(), "unknown config key"))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

pub fn resolve_config(patch: Option<&Value>) -> Result<PipelineConfig, Violation> {
    let mut base = serde_json::to_value(PipelineConfig::default()).map_err(|e| Violation::new("$", e.to_string()))?;
    if let Some(p) = patch {
        if !p.is_object() {
            return Err(Violation::new("$.config", "expected an object"));
        }
        merge(&mut base, p, "$.config")?;
    }
    let cfg: PipelineConfig = serde_path_to_error::deserialize(&base)
        .map_err(|e| Violation::new(format!("$.config.{}", e.path()), e.inner().to_string()))?;
    cfg.validate().map_err(|e| Violation::new("$.config", e.to_string()))?;
    Ok(cfg)
}

pub async fn create_job(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = find(&state, &id)?;
    let req: JobRequest = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_slice(&body))
        .map_err(|e| ApiError::bad_request(format!("request body: $.{}: {}", e.path(), e.inner())))?;
    let config = resolve_config(req.config.as_ref()).map_err(|v| ApiError::unprocessable("invalid config", vec![v]))?;
    let job = {
        let mut s = lock(&handle);
        if let Some(job) = s.active_job() {
            return Err(ApiError::conflict(format!("job {} is still active", job.id)));
        }
        match &s.annotations {
            None => return Err(ApiError::unprocessable("session has no annotations", Vec::new())),
            Some(a) if a.keypoints.is_empty() => {
                return Err(ApiError::unprocessable("annotations define no keypoints", Vec::new()))
            }
            Some(_) => {}
        }
        let job = Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            session_id: s.id.clone(),
            kind: req.kind,
            status: JobStatus::Queued,
            progress: 0.0,
            step: 0,
            total_steps: match req.kind {
                JobKind::Track => 0,
                JobKind::Optimize => config.optim.steps,
            },
            loss: None,
            method: None,
            error: None,
            config,
        };
        s.jobs.push(job.clone());
        s.save_record().map_err(ApiError::internal)?;
        job
    };
    log::info!("job {} queued on session {id} ({:?})", job.id, job.kind);
    jobs::spawn(state.clone(), handle, job.id.clone());
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

pub async fn list_jobs(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<Job>>> {
    let handle = find(&state, &id)?;
    let jobs = lock(&handle).jobs.clone();
    Ok(Json(jobs))
}

pub async fn get_job(State(state): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<Job>> {
    state
        .find_job(&job_id)
        .map(|(_, j)| Json(j))
        .ok_or_else(|| ApiError::not_found(format!("no job {job_id}")))
}

pub async fn get_trace(State(state): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Response> {
    let (handle, job) = state
        .find_job(&job_id)
        .ok_or_else(|| ApiError::not_found(format!("no job {job_id}")))?;
    if job.kind != JobKind::Optimize || job.status != JobStatus::Done {
        return Err(ApiError::not_found(format!("job {job_id} has no trace")));
    }
    let path = lock(&handle).trace_path(&job_id);
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

// -------------------------------------------------------------- results

fn method_param(params: &HashMap<String, String>) -> ApiResult<Option<TrackMethod>> {
    match params.get("method") {
        None => Ok(None),
        Some(m) => TrackMethod::parse(m)
            .map(Some)
            .ok_or_else(|| ApiError::bad_request(format!("unknown method {m:?}; expected frozen or optimized"))),
    }
}

pub async fn get_tracks(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<TrackFile>> {
    let handle = find(&state, &id)?;
    let method = method_param(&params)?;
    let s = lock(&handle);
    let (_, result) = pick_result(&s, method)?;
    Ok(Json(TrackFile::new(&result.tracks)))
}

fn pick_result(s: &Session, method: Option<TrackMethod>) -> ApiResult<(TrackMethod, &crate::state::MethodResult)> {
    match method {
        Some(m) => s
            .results
            .get(&m)
            .map(|r| (m, r))
            .ok_or_else(|| ApiError::not_found(format!("no {m} tracks yet"))),
        None => s
            .results
            .iter()
            .next_back()
            .map(|(m, r)| (*m, r))
            .ok_or_else(|| ApiError::conflict("no tracks yet")),
    }
}

/// Zip of annotations.json, tracks.csv and embedding.bin for one method
/// (optimized when present).
pub async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let handle = find(&state, &id)?;
    let method = method_param(&params)?;
    let (method, bytes) = {
        let s = lock(&handle);
        let (method, result) = pick_result(&s, method)?;
        let ann = s
            .annotations
            .as_ref()
            .ok_or_else(|| ApiError::conflict("session has no annotations"))?;
        let mut ann_json = serde_json::to_vec_pretty(&io::annotations_to_json(ann)).map_err(ApiError::internal)?;
        ann_json.push(b'\n');
        let csv = io::tracks_to_csv(&result.tracks);
        let emb = io::embedding_to_bytes(&result.embedding, &result.features).map_err(ApiError::internal)?;
        let zip = build_zip(&[
            ("annotations.json", &ann_json),
            ("tracks.csv", csv.as_bytes()),
            ("embedding.bin", &emb),
        ])
        .map_err(ApiError::internal)?;
        (method, zip)
    };
    let disposition = format!("attachment; filename=\"{id}-{method}.zip\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

fn build_zip(entries: &[(&str, &[u8])]) -> zip::result::ZipResult<Vec<u8>> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    for (name, bytes) in entries {
        zip.start_file(*name, options)?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish()?.into_inner())
}
