//! Local HTTP API over calibration, live detection and event review.
//!
//! Original frames are accepted but never served back: the only image
//! endpoint returns hidden frames. See `api.yaml` for the request and
//! response bodies.

mod error;
pub mod session;

use std::collections::HashMap;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use hashproctor_core::anomaly::{AnomalyEvent, Verdict};
use hashproctor_core::calibration::Arrow;
use hashproctor_core::detections::RawDetection;
use hashproctor_core::pipeline::DEFAULT_CLIP_PAD;
use hashproctor_core::Frame;
use serde::Deserialize;

pub use error::{ApiError, ApiResult};
pub use session::{Phase, Session, SessionSettings};

/// Uploads are whole PNG/JPEG frames; 720p PNGs exceed axum's 2 MB default.
const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Sessions keep hidden frames, calibration captures and reports here,
    /// one subdirectory per session.
    pub data_dir: PathBuf,
    pub clip_pad: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            clip_pad: DEFAULT_CLIP_PAD,
        }
    }
}

type Shared = Arc<Mutex<Session>>;

#[derive(Clone)]
struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, Shared>>>,
}

impl AppState {
    fn get(&self, id: &str) -> ApiResult<Shared> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }
}

/// Run `f` on the session off the async runtime. Requests for one session
/// queue on its mutex, so its frames are processed one at a time.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
{
    let shared = state.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut s = shared.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut s)
    })
    .await
    .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(config: ServiceConfig) -> Router {
    let state = AppState {
        config: Arc::new(config),
        sessions: Arc::default(),
    };
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/calibration/next", post(calibration_next))
        .route("/sessions/{id}/calibration/response", post(calibration_response))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/frames", post(ingest_frame))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/series", get(series))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/events/{eid}/clip", get(clip))
        .route("/sessions/{id}/events/{eid}/verdict", post(verdict))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_session(State(state): State<AppState>, body: Option<Json<SessionSettings>>) -> ApiResult<impl IntoResponse> {
    let settings = body.map(|Json(s)| s).unwrap_or_default();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.config.data_dir.join(&id);
    let session = {
        let id = id.clone();
        tokio::task::spawn_blocking(move || Session::new(id, settings, dir))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    let summary = session.summary();
    state.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((axum::http::StatusCode::CREATED, Json(summary)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(with_session(&state, &id, |s| Ok(s.summary())).await?))
}

async fn calibration_next(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(with_session(&state, &id, |s| Ok(s.next_stimulus()?)).await?))
}

/// Multipart fields by name. Repeated names keep the last value.
async fn fields(mut mp: Multipart) -> ApiResult<HashMap<String, Vec<u8>>> {
    let mut out = HashMap::new();
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("field {name}: {e}")))?;
        out.insert(name, bytes.to_vec());
    }
    Ok(out)
}

fn text_field(f: &HashMap<String, Vec<u8>>, name: &str) -> ApiResult<Option<String>> {
    f.get(name)
        .map(|b| {
            String::from_utf8(b.clone())
                .map(|s| s.trim().to_string())
                .map_err(|_| ApiError::bad_request(format!("field {name} is not UTF-8")))
        })
        .transpose()
}

fn image_field(f: &HashMap<String, Vec<u8>>, name: &str) -> ApiResult<Frame> {
    let bytes = f
        .get(name)
        .ok_or_else(|| ApiError::bad_request(format!("missing field {name}")))?;
    Ok(Frame::decode(bytes)?)
}

fn detection_field(f: &HashMap<String, Vec<u8>>) -> ApiResult<Option<RawDetection>> {
    match text_field(f, "detection")? {
        Some(t) if !t.is_empty() => serde_json::from_str(&t)
            .map(Some)
            .map_err(|e| ApiError::bad_request(format!("detection entry: {e}"))),
        _ => Ok(None),
    }
}

async fn calibration_response(
    State(state): State<AppState>,
    Path(id): Path<String>,
    mp: Multipart,
) -> ApiResult<impl IntoResponse> {
    let f = fields(mp).await?;
    let key: Arrow = text_field(&f, "key")?
        .ok_or_else(|| ApiError::bad_request("missing field key"))?
        .parse()?;
    let photo = image_field(&f, "photo")?;
    let detection = detection_field(&f)?;
    Ok(Json(with_session(&state, &id, move |s| Ok(s.respond(key, photo, detection)?)).await?))
}

async fn start(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(
        with_session(&state, &id, |s| {
            s.start()?;
            Ok(s.summary())
        })
        .await?,
    ))
}

async fn ingest_frame(State(state): State<AppState>, Path(id): Path<String>, mp: Multipart) -> ApiResult<impl IntoResponse> {
    let f = fields(mp).await?;
    let index: u64 = text_field(&f, "index")?
        .ok_or_else(|| ApiError::bad_request("missing field index"))?
        .parse()
        .map_err(|_| ApiError::bad_request("index must be a non-negative integer"))?;
    let frame = image_field(&f, "frame")?;
    let detection = detection_field(&f)?;
    Ok(Json(with_session(&state, &id, move |s| Ok(s.ingest(index, frame, detection)?)).await?))
}

async fn finish(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(with_session(&state, &id, |s| Ok(s.finish()?.clone())).await?))
}

async fn series(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(with_session(&state, &id, |s| Ok(s.series()?)).await?))
}

#[derive(Debug, Deserialize)]
struct EventFilter {
    verdict: Option<Verdict>,
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(filter): Query<EventFilter>,
) -> ApiResult<impl IntoResponse> {
    let all = with_session(&state, &id, |s| Ok(s.events())).await?;
    let listed: Vec<serde_json::Value> = all
        .into_iter()
        .enumerate()
        .filter(|(_, e)| filter.verdict.is_none_or(|v| e.verdict == v))
        .map(|(i, e)| event_json(i, &e))
        .collect();
    Ok(Json(listed))
}

fn event_json(id: usize, e: &AnomalyEvent) -> serde_json::Value {
    let mut v = serde_json::to_value(e).expect("event serialises");
    v["id"] = id.into();
    v
}

async fn report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(with_session(&state, &id, |s| Ok(s.report()?.clone())).await?))
}

fn check_event(s: &Session, eid: usize) -> ApiResult<()> {
    if eid >= s.events().len() {
        return Err(ApiError::not_found(format!("unknown event {eid} in session {}", s.id())));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    verdict: Verdict,
}

async fn verdict(
    State(state): State<AppState>,
    Path((id, eid)): Path<(String, usize)>,
    Json(body): Json<VerdictBody>,
) -> ApiResult<impl IntoResponse> {
    let e = with_session(&state, &id, move |s| {
        check_event(s, eid)?;
        Ok(s.set_verdict(eid, body.verdict)?)
    })
    .await?;
    Ok(Json(event_json(eid, &e)))
}

/// The event's hidden frames as a stored (uncompressed) zip.
async fn clip(State(state): State<AppState>, Path((id, eid)): Path<(String, usize)>) -> ApiResult<impl IntoResponse> {
    let pad = state.config.clip_pad;
    let bytes = with_session(&state, &id, move |s| {
        check_event(s, eid)?;
        let files = s.clip(eid, pad)?;
        zip_files(&files).map_err(|e| ApiError::internal(format!("building clip: {e}")))
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-event-{eid}.zip\"")),
        ],
        bytes,
    ))
}

fn zip_files(files: &[PathBuf]) -> Result<Vec<u8>, Box<dyn std::error::Error>> {
    let mut zip = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).ok_or("bad file name")?;
        zip.start_file(name, opts)?;
        zip.write_all(&std::fs::read(path)?)?;
    }
    Ok(zip.finish()?.into_inner())
}
