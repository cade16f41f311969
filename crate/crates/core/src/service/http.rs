use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::consensus::{Decision, Position};
use crate::feedback::{Period, DAY_MS};
use crate::pipeline::BundleRef;
use crate::preference::LabeledVideoRef;
use crate::time::Timestamp;

use super::engine::{parse_role, Caller, Engine, PanelUpdate, ServiceError};

pub type SharedEngine = Arc<Mutex<Engine>>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownCode | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::CodeExpired
            | ServiceError::CodeUsed
            | ServiceError::RoleTaken(_)
            | ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Provider(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownCode => "UnknownCode",
            ServiceError::CodeExpired => "CodeExpired",
            ServiceError::CodeUsed => "CodeUsed",
            ServiceError::RoleTaken(_) => "RoleTaken",
            ServiceError::NotFound(_) => "NotFound",
            ServiceError::Unauthorized => "Unauthorized",
            ServiceError::Forbidden(_) => "Forbidden",
            ServiceError::Conflict(_) => "Conflict",
            ServiceError::Validation(_) => "Validation",
            ServiceError::Provider(_) => "ProviderError",
            ServiceError::Storage(_) => "StorageError",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.code(), "message": self.to_string() }));
        (self.status(), body).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn lock(engine: &SharedEngine) -> MutexGuard<'_, Engine> {
    engine
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn caller(engine: &Engine, headers: &HeaderMap) -> Result<Caller, ServiceError> {
    engine.authenticate(bearer(headers))
}

/// Bodies are parsed here rather than by the `Json` extractor so every
/// malformed body maps to the same 422 error shape. An empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ServiceError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        bytes
    };
    serde_json::from_slice(raw).map_err(|e| ServiceError::Validation(format!("request body: {e}")))
}

pub fn router(engine: SharedEngine) -> Router {
    Router::new()
        .route("/pairs", post(create_pair))
        .route("/pairs/{id}", get(get_pair))
        .route("/pairs/{id}/join", post(join_pair))
        .route("/pairs/{id}/panels/{role}", get(get_panel).put(put_panel))
        .route(
            "/pairs/{id}/panels/{role}/from-videos",
            post(panel_from_videos),
        )
        .route("/pairs/{id}/consensus", post(start_consensus))
        .route("/pairs/{id}/videos", post(register_video))
        .route("/pairs/{id}/reports", get(report))
        .route("/pairs/{id}/events", get(events))
        .route("/consensus/{sid}", get(snapshot))
        .route("/consensus/{sid}/respond", post(respond))
        .route("/consensus/{sid}/reasons", post(reason))
        .route("/consensus/{sid}/positions", post(position))
        .route("/consensus/{sid}/advance", post(advance))
        .route("/videos/{vid}/censor", post(censor))
        .route("/videos/{vid}/feedback", get(feedback))
        .with_state(engine)
}

async fn create_pair(
    State(engine): State<SharedEngine>,
) -> Result<impl IntoResponse, ServiceError> {
    let code = lock(&engine).create_pair()?;
    let body = json!({
        "code": code.code,
        "pair_id": code.pair_id,
        "created_at": code.created_at,
        "expires_at": code.expires_at(),
        "used": code.used,
    });
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Deserialize)]
struct JoinBody {
    role: String,
    account: String,
}

async fn join_pair(
    State(engine): State<SharedEngine>,
    Path(code): Path<String>,
    bytes: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let req: JoinBody = body(&bytes)?;
    let role = parse_role(&req.role)?;
    Ok(Json(lock(&engine).join_pair(&code, role, &req.account)?))
}

async fn get_pair(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<super::engine::PairView> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.pair_view(&c, &id)?))
}

async fn get_panel(
    State(engine): State<SharedEngine>,
    Path((id, role)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<crate::preference::PreferencePanel> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.get_panel(&c, &id, parse_role(&role)?)?))
}

async fn put_panel(
    State(engine): State<SharedEngine>,
    Path((id, role)): Path<(String, String)>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<crate::preference::PreferencePanel> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let update: PanelUpdate = body(&bytes)?;
    Ok(Json(e.update_panel(
        &c,
        &id,
        parse_role(&role)?,
        &update,
    )?))
}

#[derive(Deserialize)]
struct FromVideosBody {
    videos: Vec<LabeledVideoRef>,
}

async fn panel_from_videos(
    State(engine): State<SharedEngine>,
    Path((id, role)): Path<(String, String)>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<crate::preference::PreferencePanel> {
    let job = {
        let e = lock(&engine);
        let c = caller(&e, &headers)?;
        let req: FromVideosBody = body(&bytes)?;
        e.prepare_infer(&c, &id, parse_role(&role)?, &req.videos)?
    };
    let (c, role, labeled) = tokio::task::spawn_blocking(move || job.run())
        .await
        .map_err(|e| ServiceError::Storage(e.to_string()))??;
    Ok(Json(lock(&engine).finish_infer(&c, role, &labeled)?))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct StartBody {
    panel: Option<BTreeMap<String, i64>>,
}

async fn start_consensus(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let req: StartBody = body(&bytes)?;
    Ok((
        StatusCode::CREATED,
        Json(e.start_consensus(&c, &id, req.panel)?),
    ))
}

async fn snapshot(
    State(engine): State<SharedEngine>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> ApiResult<super::engine::SessionSnapshot> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.snapshot(&c, &sid)?))
}

async fn respond(
    State(engine): State<SharedEngine>,
    Path(sid): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<super::engine::SessionSnapshot> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let decision: Decision = body(&bytes)?;
    Ok(Json(e.respond(&c, &sid, decision)?))
}

#[derive(Deserialize)]
struct ReasonBody {
    keyword: String,
    #[serde(default)]
    reason: String,
}

async fn reason(
    State(engine): State<SharedEngine>,
    Path(sid): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<super::engine::SessionSnapshot> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let req: ReasonBody = body(&bytes)?;
    Ok(Json(e.reason(&c, &sid, &req.keyword, &req.reason)?))
}

#[derive(Deserialize)]
struct PositionBody {
    keyword: String,
    position: Position,
}

async fn position(
    State(engine): State<SharedEngine>,
    Path(sid): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<super::engine::SessionSnapshot> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let req: PositionBody = body(&bytes)?;
    Ok(Json(e.position(&c, &sid, &req.keyword, req.position)?))
}

async fn advance(
    State(engine): State<SharedEngine>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> ApiResult<super::engine::SessionSnapshot> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.advance(&c, &sid)?))
}

#[derive(Deserialize)]
struct VideoBody {
    video_id: Option<String>,
    bundle: BundleRef,
}

async fn register_video(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let mut e = lock(&engine);
    let c = caller(&e, &headers)?;
    let req: VideoBody = body(&bytes)?;
    let video = e.register_video(&c, &id, req.video_id.as_deref(), req.bundle)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "video_id": video.video_id,
            "pair_id": video.pair_id,
            "submitted_by": video.submitted_by,
        })),
    ))
}

async fn censor(
    State(engine): State<SharedEngine>,
    Path(vid): Path<String>,
    headers: HeaderMap,
) -> ApiResult<crate::provider::CensorshipResult> {
    let job = {
        let e = lock(&engine);
        let c = caller(&e, &headers)?;
        e.prepare_censor(&c, &vid)?
    };
    let (job, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = job.run();
        (job, outcome)
    })
    .await
    .map_err(|e| ServiceError::Storage(e.to_string()))?;
    let (result, feedback) = outcome?;
    Ok(Json(lock(&engine).finish_censor(&job, result, feedback)?))
}

async fn feedback(
    State(engine): State<SharedEngine>,
    Path(vid): Path<String>,
    headers: HeaderMap,
) -> ApiResult<crate::feedback::InTimeFeedback> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.feedback(&c, &vid)?))
}

#[derive(Deserialize)]
struct ReportQuery {
    from: Option<String>,
    to: Option<String>,
    bucket_ms: Option<i64>,
}

fn query_time(
    value: Option<&str>,
    name: &str,
    default: Timestamp,
) -> Result<Timestamp, ServiceError> {
    match value {
        None => Ok(default),
        Some(text) => Timestamp::parse(text).ok_or_else(|| {
            ServiceError::Validation(format!("{name}: expected milliseconds or RFC 3339"))
        }),
    }
}

async fn report(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<ReportQuery>,
) -> ApiResult<crate::feedback::SummaryReport> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    let to = query_time(q.to.as_deref(), "to", e.now().plus_millis(1))?;
    let from = query_time(q.from.as_deref(), "from", to.plus_millis(-7 * DAY_MS))?;
    let period = Period {
        from,
        to,
        bucket_ms: q.bucket_ms.unwrap_or(DAY_MS),
    };
    Ok(Json(e.report(&c, &id, &period)?))
}

async fn events(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Vec<super::engine::PublicEvent>> {
    let e = lock(&engine);
    let c = caller(&e, &headers)?;
    Ok(Json(e.events(&c, &id)?))
}
