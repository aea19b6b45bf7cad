//! Serialized writes and replay of mutating requests that carry a client request id.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};

use crate::error::ApiError;
use crate::AppState;

pub const REQUEST_ID_HEADER: &str = "idempotency-key";
pub const ALT_REQUEST_ID_HEADER: &str = "x-request-id";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

const MAX_BODY: usize = 16 * 1024 * 1024;
const CAPACITY: usize = 4096;

struct Entry {
    method: Method,
    path: String,
    request: Bytes,
    status: StatusCode,
    headers: HeaderMap,
    response: Bytes,
}

#[derive(Default)]
pub(crate) struct ReplayCache {
    inner: Mutex<(HashMap<String, Entry>, VecDeque<String>)>,
}

impl ReplayCache {
    fn lookup(&self, key: &str, method: &Method, path: &str, body: &Bytes) -> Option<Response> {
        let guard = self.inner.lock().unwrap();
        let entry = guard.0.get(key)?;
        if entry.method != method || entry.path != path || entry.request != body {
            return Some(
                ApiError::new(
                    "IdempotencyKeyReused",
                    format!("request id {key:?} was already used for a different request"),
                )
                .into_response(),
            );
        }
        let mut response = Response::new(Body::from(entry.response.clone()));
        *response.status_mut() = entry.status;
        *response.headers_mut() = entry.headers.clone();
        response
            .headers_mut()
            .insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
        Some(response)
    }

    fn store(&self, key: String, entry: Entry) {
        let mut guard = self.inner.lock().unwrap();
        let (map, order) = &mut *guard;
        if map.insert(key.clone(), entry).is_none() {
            order.push_back(key);
        }
        while order.len() > CAPACITY {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
    }
}

fn request_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get(REQUEST_ID_HEADER)
        .or_else(|| headers.get(ALT_REQUEST_ID_HEADER))
        .and_then(|v| v.to_str().ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Runs POST requests one at a time. A POST carrying a request id that was
/// already answered gets the stored response back instead of running again.
pub(crate) async fn guard(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if request.method() != Method::POST {
        return next.run(request).await;
    }
    let _write = state.writes.clone().lock_owned().await;
    let Some(key) = request_id(request.headers()) else {
        return next.run(request).await;
    };
    let (parts, body) = request.into_parts();
    let body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(format!("unreadable body: {e}")).into_response(),
    };
    let path = parts.uri.path().to_string();
    if let Some(replay) = state.replays.lookup(&key, &parts.method, &path, &body) {
        return replay;
    }
    let method = parts.method.clone();
    let response = next
        .run(Request::from_parts(parts, Body::from(body.clone())))
        .await;
    if response.status().is_server_error() {
        return response;
    }
    let (rparts, rbody) = response.into_parts();
    let rbytes = match to_bytes(rbody, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(format!("response body: {e}")).into_response(),
    };
    state.replays.store(
        key,
        Entry {
            method,
            path,
            request: body,
            status: rparts.status,
            headers: rparts.headers.clone(),
            response: rbytes.clone(),
        },
    );
    Response::from_parts(rparts, Body::from(rbytes))
}
