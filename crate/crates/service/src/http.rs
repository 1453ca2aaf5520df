//! JSON-over-HTTP API and the server-sent event stream of each edit.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use paintword::engine::{EditEvent, EditHandle, EditRequest, Engine};
use paintword::io::{decode_mask_png, encode_png};
use paintword::losses::DEFAULT_LAMBDA_IMG;
use paintword::optim::OptimizationSchedule;
use paintword::scorers::{DistanceWeights, Prompt};
use paintword::Error;
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Schedule for edits that do not bring their own.
    pub schedule: OptimizationSchedule,
}

impl AppState {
    pub fn new(engine: Engine, schedule: OptimizationSchedule) -> Self {
        Self {
            engine: Arc::new(engine),
            schedule,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/models", get(list_models))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/image", get(session_image))
        .route("/v1/sessions/{id}/mask", put(put_mask))
        .route("/v1/sessions/{id}/edits", post(create_edit))
        .route("/v1/sessions/{id}/edits/{eid}/stream", get(edit_stream))
        .route("/v1/sessions/{id}/edits/{eid}/image", get(edit_image))
        .route("/v1/sessions/{id}/edits/{eid}/accept", post(accept_edit))
        .route("/v1/sessions/{id}/edits/{eid}/revert", post(revert_edit))
        .with_state(state)
}

/// An engine error rendered as `{code, message}` with a matching status.
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "BUSY" | "NOT_COMPLETED" | "ALREADY_ACCEPTED" => StatusCode::CONFLICT,
        "DIMENSION_MISMATCH" | "EMPTY_MASK" | "EMPTY_PROMPT" | "UNKNOWN_TOKEN" | "UNKNOWN_MODEL" | "INVALID_CONFIG"
        | "FORMAT_ERROR" => StatusCode::BAD_REQUEST,
        "ADAPTER_PROTOCOL_ERROR" => StatusCode::BAD_GATEWAY,
        "ADAPTER_TIMEOUT" => StatusCode::GATEWAY_TIMEOUT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = self.0.code();
        let body = Json(json!({ "code": code, "message": self.0.to_string() }));
        (status_for(code), body).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> paintword::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        .map_err(ApiError)
}

/// Parses a JSON body, reporting malformed input as `INVALID_CONFIG`
/// rather than axum's plain-text rejection.
fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let bytes: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ApiError(Error::InvalidConfig(format!("request body: {e}"))))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn image_url(id: &str) -> String {
    format!("/v1/sessions/{id}/image")
}

fn edit_image_url(id: &str, eid: &str) -> String {
    format!("/v1/sessions/{id}/edits/{eid}/image")
}

async fn list_models(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "models": s.engine.registry.list() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    generator: String,
    scorer: String,
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_body(&body)?;
    let engine = s.engine.clone();
    let id = blocking(move || engine.create_session(&req.generator, &req.scorer, None, req.seed)).await?;
    let body = json!({ "session_id": id, "image_url": image_url(&id) });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let summary = s.engine.summary(&id)?;
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}

async fn delete_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    s.engine.delete_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn session_image(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let engine = s.engine.clone();
    let png = blocking(move || encode_png(&engine.current_image(&id)?)).await?;
    Ok(png_response(png))
}

async fn put_mask(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let mask = decode_mask_png(&body)?;
    let coverage = s.engine.set_mask(&id, mask)?;
    Ok(Json(json!({ "mask_coverage": coverage })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateEdit {
    text: String,
    #[serde(default)]
    lambda_img: Option<f64>,
    #[serde(default)]
    schedule: Option<OptimizationSchedule>,
}

async fn create_edit(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CreateEdit = parse_body(&body)?;
    let engine = s.engine.clone();
    let default_schedule = s.schedule.clone();
    let sid = id.clone();
    let handle = blocking(move || {
        // No mask here: the session's stored mask applies.
        let edit = EditRequest {
            prompt: Prompt::new(&req.text)?,
            mask: None,
            lambda_img: req.lambda_img.unwrap_or(DEFAULT_LAMBDA_IMG),
            schedule: req.schedule.unwrap_or(default_schedule),
            distance: DistanceWeights::default(),
        };
        engine.begin_edit(&sid, edit)
    })
    .await?;
    let eid = handle.edit_id.clone();
    let body = json!({
        "edit_id": eid,
        "stream_url": format!("/v1/sessions/{id}/edits/{eid}/stream"),
    });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

/// The wire form of an event: `done` gains the URL of the edited image.
pub fn event_json(e: &EditEvent, session_id: &str, edit_id: &str) -> (&'static str, Value) {
    let mut v = serde_json::to_value(e).expect("events serialize");
    let name = match e {
        EditEvent::Progress { .. } => "progress",
        EditEvent::Done { .. } => {
            v["image_url"] = Value::from(edit_image_url(session_id, edit_id));
            "done"
        }
        EditEvent::Error { .. } => "error",
    };
    (name, v)
}

fn event_stream(handle: Arc<EditHandle>) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((handle, 0usize, false), |(handle, from, finished)| async move {
        if finished {
            return None;
        }
        let h = handle.clone();
        let batch = tokio::task::spawn_blocking(move || h.wait_events(from, Duration::from_millis(500)))
            .await
            .unwrap_or_default();
        let done = batch.iter().any(EditEvent::is_terminal);
        let events: Vec<Result<Event, Infallible>> = batch
            .iter()
            .map(|e| {
                let (name, v) = event_json(e, &handle.session_id, &handle.edit_id);
                Ok(Event::default().event(name).data(v.to_string()))
            })
            .collect();
        let next = from + batch.len();
        Some((stream::iter(events), (handle, next, done)))
    })
    .flatten()
}

async fn edit_stream(
    State(s): State<AppState>,
    Path((id, eid)): Path<(String, String)>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let handle = s.engine.edit_handle(&id, &eid)?;
    Ok(Sse::new(event_stream(handle)).keep_alive(KeepAlive::default()))
}

async fn edit_image(State(s): State<AppState>, Path((id, eid)): Path<(String, String)>) -> ApiResult<Response> {
    let handle = s.engine.edit_handle(&id, &eid)?;
    let png = blocking(move || {
        let result = handle.result().ok_or(Error::NotCompleted)?;
        encode_png(&result.result_image)
    })
    .await?;
    Ok(png_response(png))
}

async fn accept_edit(State(s): State<AppState>, Path((id, eid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let summary = s.engine.accept_edit(&id, &eid)?;
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}

async fn revert_edit(State(s): State<AppState>, Path((id, eid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let summary = s.engine.revert_edit(&id, &eid)?;
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}
