use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{middleware, Json, Router};
use cotscore_core::hitl::{CandidateRanking, CandidateWeights, IrrSession, PromotionRequest, TrendReport};
use cotscore_core::metrics::RunMetrics;
use cotscore_core::prompt::Prompt;
use cotscore_core::rubric::{Assessment, Rubric};
use cotscore_core::runner::{RunManifest, RunRecord, ScoredResult};
use cotscore_core::workspace::{
    ConfigSummary, IrrScoresRequest, OpenIrrRequest, PromotionOutcome, ResolutionOutcome,
    ResolutionRequest, RunRequest, Workspace, WorkspaceError,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::ApiError;
use crate::jobs::Job;
use crate::{idempotency, schema, AppState};

type ApiResult<T> = Result<Json<T>, ApiError>;

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/api-schema", get(api_schema))
        .route("/runs", get(list_runs).post(start_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/results/{response_id}", get(get_result))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/runs/{id}/trends", get(run_trends))
        .route("/runs/{id}/candidates", get(run_candidates))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/irr/sessions", get(list_irr).post(open_irr))
        .route("/irr/sessions/{id}", get(get_irr))
        .route("/irr/sessions/{id}/scores", post(irr_scores))
        .route("/irr/sessions/{id}/resolutions", post(irr_resolve))
        .route("/irr/sessions/{id}/resample", post(irr_resample))
        .route("/rubrics", get(rubrics))
        .route("/assessments", get(assessments))
        .route("/providers", get(providers))
        .route("/exemplars/promote", post(promote))
        .route("/al/promote", post(promote))
        .route("/configs", get(configs))
        .route("/configs/{hash}/prompt", get(config_prompt))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), idempotency::guard))
        .with_state(state)
}

/// JSON body whose rejection is an [`ApiError`].
pub(crate) struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| JsonBody(v))
            .map_err(|rej| ApiError::bad_request(rej.body_text()))
    }
}

/// Query string whose rejection is an [`ApiError`].
pub(crate) struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|rej| ApiError::bad_request(rej.body_text()))
    }
}

/// Runs a workspace call off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Workspace) -> Result<T, WorkspaceError> + Send + 'static,
{
    let ws = state.ws.clone();
    match tokio::task::spawn_blocking(move || f(&ws)).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(e.into()),
        Err(e) => Err(ApiError::internal(format!("handler panicked: {e}"))),
    }
}

async fn fallback() -> ApiError {
    ApiError::new("NotFound", "no such endpoint")
}

async fn api_schema() -> Json<serde_json::Value> {
    Json(schema::api_schema())
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Vec<RunManifest>> {
    blocking(&s, |ws| ws.runs()).await
}

async fn start_run(
    State(s): State<AppState>,
    JsonBody(request): JsonBody<RunRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let checked = request.clone();
    let Json(()) = blocking(&s, move |ws| {
        let resolved = ws.resolve(&checked.config)?;
        if let Some(a) = &checked.assessment {
            if *a != resolved.config.assessment_id {
                return Err(WorkspaceError::Invalid(format!(
                    "config {:?} scores assessment {:?}, not {a:?}",
                    checked.config, resolved.config.assessment_id
                )));
            }
        }
        ws.provider_config(&checked.provider)?;
        Ok(())
    })
    .await?;
    let job: Job = s.jobs.submit(request);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<RunRecord> {
    blocking(&s, move |ws| ws.load_run(&id)).await
}

async fn get_result(
    State(s): State<AppState>,
    Path((id, response_id)): Path<(String, String)>,
) -> ApiResult<ScoredResult> {
    blocking(&s, move |ws| {
        let run = ws.load_run(&id)?;
        run.result(&response_id).cloned().ok_or(WorkspaceError::NotFound {
            kind: "result",
            id: format!("{id}/{response_id}"),
        })
    })
    .await
}

async fn run_metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<RunMetrics> {
    blocking(&s, move |ws| ws.metrics(&id)).await
}

#[derive(Debug, Default, Deserialize)]
struct TrendQuery {
    threshold: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
}

impl TrendQuery {
    fn weights(&self) -> Option<CandidateWeights> {
        if self.alpha.is_none() && self.beta.is_none() && self.gamma.is_none() {
            return None;
        }
        let d = CandidateWeights::default();
        Some(CandidateWeights {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            gamma: self.gamma.unwrap_or(d.gamma),
        })
    }
}

async fn run_trends(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Params(q): Params<TrendQuery>,
) -> ApiResult<TrendReport> {
    blocking(&s, move |ws| ws.trends(&id, q.threshold)).await
}

async fn run_candidates(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Params(q): Params<TrendQuery>,
) -> ApiResult<CandidateRanking> {
    blocking(&s, move |ws| ws.candidates(&id, q.threshold, q.weights())).await
}

async fn list_jobs(State(s): State<AppState>) -> Json<Vec<Job>> {
    Json(s.jobs.list())
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Job> {
    s.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

async fn list_irr(State(s): State<AppState>) -> ApiResult<Vec<IrrSession>> {
    blocking(&s, |ws| ws.irr_sessions()).await
}

async fn open_irr(
    State(s): State<AppState>,
    JsonBody(request): JsonBody<OpenIrrRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let session = blocking(&s, move |ws| ws.open_irr(&request)).await?;
    Ok((StatusCode::CREATED, session))
}

async fn get_irr(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<IrrSession> {
    blocking(&s, move |ws| ws.irr_session(&id)).await
}

async fn irr_scores(
    State(s): State<AppState>,
    Path(id): Path<String>,
    JsonBody(request): JsonBody<IrrScoresRequest>,
) -> ApiResult<IrrSession> {
    blocking(&s, move |ws| ws.record_irr_scores(&id, &request)).await
}

async fn irr_resolve(
    State(s): State<AppState>,
    Path(id): Path<String>,
    JsonBody(request): JsonBody<ResolutionRequest>,
) -> ApiResult<ResolutionOutcome> {
    blocking(&s, move |ws| ws.resolve_irr(&id, &request)).await
}

async fn irr_resample(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<IrrSession> {
    blocking(&s, move |ws| ws.resample_irr(&id)).await
}

async fn rubrics(State(s): State<AppState>) -> ApiResult<Vec<Rubric>> {
    blocking(&s, |ws| ws.rubrics()).await
}

async fn assessments(State(s): State<AppState>) -> ApiResult<Vec<Assessment>> {
    blocking(&s, |ws| ws.assessments()).await
}

async fn providers(State(s): State<AppState>) -> ApiResult<Vec<String>> {
    blocking(&s, |ws| ws.provider_ids()).await
}

async fn promote(
    State(s): State<AppState>,
    JsonBody(request): JsonBody<PromotionRequest>,
) -> ApiResult<PromotionOutcome> {
    blocking(&s, move |ws| ws.promote(&request)).await
}

async fn configs(State(s): State<AppState>) -> ApiResult<Vec<ConfigSummary>> {
    blocking(&s, |ws| ws.configs()).await
}

async fn config_prompt(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult<Prompt> {
    blocking(&s, move |ws| ws.render(&hash)).await
}
