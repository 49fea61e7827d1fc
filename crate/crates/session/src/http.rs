//! JSON-over-HTTP front end for [`Service`].
//!
//! Experimenter routes take the session token and subject routes the
//! subject token, either as `Authorization: Bearer <token>` or as a
//! `token` query parameter.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use riskprobe_core::records::RecordFormat;

use crate::state::ProtocolError;
use crate::service::{CreateSession, FinalizeRequest, RegisterSubject, Service, ServiceError, Submission};

type Params = Query<HashMap<String, String>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/subjects", post(register_subject))
        .route("/sessions/{id}/subjects/{sid}/plan", get(plan))
        .route("/sessions/{id}/subjects/{sid}/next", get(next))
        .route("/sessions/{id}/subjects/{sid}/choices", post(submit))
        .route("/sessions/{id}/subjects/{sid}/finalize", post(finalize))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/dashboard", get(dashboard))
        .with_state(service)
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::UnknownSession(_) | ServiceError::Protocol(ProtocolError::UnknownSubject(_)) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::BadId(_)
            | ServiceError::Protocol(ProtocolError::BadConfig(_))
            | ServiceError::Protocol(ProtocolError::BadChoice(_)) => StatusCode::BAD_REQUEST,
            ServiceError::DuplicateSession(_) | ServiceError::Protocol(_) => StatusCode::CONFLICT,
            ServiceError::Payout(_) | ServiceError::CorruptLog { .. } | ServiceError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn token(headers: &HeaderMap, params: &HashMap<String, String>) -> String {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .or_else(|| params.get("token").cloned())
        .unwrap_or_default()
}

/// Parses a JSON body; an empty body means the default request.
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn create_session(State(svc): State<Arc<Service>>, bytes: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = body(&bytes)?;
    Ok((StatusCode::CREATED, Json(svc.create_session(req)?)))
}

async fn register_subject(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Params,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: RegisterSubject = body(&bytes)?;
    let reg = svc.register_subject(&id, &token(&headers, &q), req)?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn plan(
    State(svc): State<Arc<Service>>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.plan(&id, &sid, &token(&headers, &q))?))
}

async fn next(
    State(svc): State<Arc<Service>>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.next(&id, &sid, &token(&headers, &q))?))
}

async fn submit(
    State(svc): State<Arc<Service>>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<impl IntoResponse> {
    let sub: Submission =
        serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("malformed choice: {e}")))?;
    let ack = svc.submit(&id, &sid, &token(&headers, &q), sub)?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn finalize(
    State(svc): State<Arc<Service>>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: FinalizeRequest = body(&bytes)?;
    Ok(Json(svc.finalize(&id, &sid, &token(&headers, &q), req)?))
}

async fn close(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Params,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    svc.close(&id, &token(&headers, &q))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn export(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Params,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let format = match q.get("format").map(String::as_str) {
        None | Some("csv") => RecordFormat::Csv,
        Some("jsonl") => RecordFormat::Jsonl,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    };
    let complete_only = match q.get("complete_only").map(String::as_str) {
        None | Some("false") | Some("0") => false,
        Some("true") | Some("1") => true,
        Some(other) => return Err(ApiError::bad_request(format!("bad complete_only `{other}`"))),
    };
    let bytes = svc.export(&id, &token(&headers, &q), format, complete_only)?;
    let mime = match format {
        RecordFormat::Csv => "text/csv; charset=utf-8",
        RecordFormat::Jsonl => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes))
}

async fn dashboard(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Params,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.dashboard(&id, &token(&headers, &q))?))
}
