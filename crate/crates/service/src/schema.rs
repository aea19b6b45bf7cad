//! OpenAPI 3.1 description of the HTTP surface, generated from the payload types.

use cotscore_core::hitl::{CandidateRanking, IrrSession, PromotionRequest, TrendReport};
use cotscore_core::metrics::RunMetrics;
use cotscore_core::prompt::Prompt;
use cotscore_core::rubric::{Assessment, Rubric};
use cotscore_core::runner::{RunManifest, RunRecord, ScoredResult};
use cotscore_core::workspace::{
    ConfigSummary, IrrScoresRequest, OpenIrrRequest, PromotionOutcome, ResolutionOutcome,
    ResolutionRequest, RunRequest,
};
use schemars::generate::SchemaSettings;
use schemars::{JsonSchema, Schema, SchemaGenerator};
use serde_json::{json, Map, Value};

use crate::error::ApiError;
use crate::idempotency::REQUEST_ID_HEADER;
use crate::jobs::Job;

struct Op {
    method: &'static str,
    path: &'static str,
    summary: &'static str,
    query: &'static [(&'static str, &'static str)],
    request: Option<Schema>,
    status: u16,
    response: Schema,
}

fn op(method: &'static str, path: &'static str, summary: &'static str, status: u16, response: Schema) -> Op {
    Op {
        method,
        path,
        summary,
        query: &[],
        request: None,
        status,
        response,
    }
}

impl Op {
    fn body(mut self, schema: Schema) -> Op {
        self.request = Some(schema);
        self
    }

    fn query(mut self, params: &'static [(&'static str, &'static str)]) -> Op {
        self.query = params;
        self
    }
}

fn s<T: JsonSchema>(g: &mut SchemaGenerator) -> Schema {
    g.subschema_for::<T>()
}

const TREND_PARAMS: &[(&str, &str)] = &[("threshold", "number")];
const CANDIDATE_PARAMS: &[(&str, &str)] = &[
    ("threshold", "number"),
    ("alpha", "number"),
    ("beta", "number"),
    ("gamma", "number"),
];

fn operations(g: &mut SchemaGenerator) -> Vec<Op> {
    vec![
        op("get", "/api-schema", "This document", 200, Schema::default()),
        op("get", "/runs", "List run manifests", 200, s::<Vec<RunManifest>>(g)),
        op("post", "/runs", "Queue a scoring run", 202, s::<Job>(g)).body(s::<RunRequest>(g)),
        op("get", "/runs/{id}", "Run manifest with results and errors", 200, s::<RunRecord>(g)),
        op("get", "/runs/{id}/results/{response_id}", "One scored response", 200, s::<ScoredResult>(g)),
        op("get", "/runs/{id}/metrics", "Agreement metrics for a run", 200, s::<RunMetrics>(g)),
        op("get", "/runs/{id}/trends", "Per-criterion error trends", 200, s::<TrendReport>(g))
            .query(TREND_PARAMS),
        op("get", "/runs/{id}/candidates", "Ranked active-learning candidates", 200, s::<CandidateRanking>(g))
            .query(CANDIDATE_PARAMS),
        op("get", "/jobs", "List queued and finished run jobs", 200, s::<Vec<Job>>(g)),
        op("get", "/jobs/{id}", "One run job", 200, s::<Job>(g)),
        op("get", "/irr/sessions", "List IRR sessions", 200, s::<Vec<IrrSession>>(g)),
        op("post", "/irr/sessions", "Open an IRR session", 201, s::<IrrSession>(g)).body(s::<OpenIrrRequest>(g)),
        op("get", "/irr/sessions/{id}", "One IRR session", 200, s::<IrrSession>(g)),
        op("post", "/irr/sessions/{id}/scores", "Record one rater's scores", 200, s::<IrrSession>(g))
            .body(s::<IrrScoresRequest>(g)),
        op("post", "/irr/sessions/{id}/resolutions", "Resolve a disagreement", 200, s::<ResolutionOutcome>(g))
            .body(s::<ResolutionRequest>(g)),
        op("post", "/irr/sessions/{id}/resample", "Start a fresh IRR round", 200, s::<IrrSession>(g)),
        op("get", "/rubrics", "Rubrics with sticking-point guidelines applied", 200, s::<Vec<Rubric>>(g)),
        op("get", "/assessments", "Assessment documents", 200, s::<Vec<Assessment>>(g)),
        op("get", "/providers", "Configured provider names", 200, s::<Vec<String>>(g)),
        op("post", "/exemplars/promote", "Promote a candidate to an exemplar", 200, s::<PromotionOutcome>(g))
            .body(s::<PromotionRequest>(g)),
        op("post", "/al/promote", "Alias of /exemplars/promote", 200, s::<PromotionOutcome>(g))
            .body(s::<PromotionRequest>(g)),
        op("get", "/configs", "Prompt config versions", 200, s::<Vec<ConfigSummary>>(g)),
        op("get", "/configs/{hash}/prompt", "Rendered prompt for a config reference or hash", 200, s::<Prompt>(g)),
    ]
}

fn path_params(path: &str) -> Vec<Value> {
    path.split('/')
        .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
        .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
        .collect()
}

/// The full API description served at `GET /api-schema`.
pub fn api_schema() -> Value {
    let mut g = SchemaSettings::draft2020_12()
        .with(|s| s.definitions_path = "/components/schemas".into())
        .into_generator();
    let error = s::<ApiError>(&mut g);
    let ops = operations(&mut g);

    let mut paths = Map::new();
    for o in ops {
        let mut params = path_params(o.path);
        params.extend(o.query.iter().map(|(name, ty)| {
            json!({"name": name, "in": "query", "required": false, "schema": {"type": ty}})
        }));
        if o.method == "post" {
            params.push(json!({
                "name": REQUEST_ID_HEADER,
                "in": "header",
                "required": false,
                "description": "Client request id; a retried POST with the same id and body replays the first response",
                "schema": {"type": "string"},
            }));
        }
        let mut operation = json!({
            "summary": o.summary,
            "parameters": params,
            "responses": {
                o.status.to_string(): {
                    "description": "Success",
                    "content": {"application/json": {"schema": o.response}},
                },
                "default": {
                    "description": "Error",
                    "content": {"application/json": {"schema": error}},
                },
            },
        });
        if let Some(body) = o.request {
            operation["requestBody"] = json!({
                "required": true,
                "content": {"application/json": {"schema": body}},
            });
        }
        let entry = paths
            .entry(o.path.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        entry[o.method] = operation;
    }

    json!({
        "openapi": "3.1.0",
        "info": {
            "title": "cotscore review service",
            "version": env!("CARGO_PKG_VERSION"),
        },
        "paths": paths,
        "components": {"schemas": g.take_definitions(true)},
    })
}
