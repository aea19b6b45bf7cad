use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, LlmResult, ParseError};
use crate::rubric::ScoreVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Under,
    Over,
}

/// Reported total differs from the sum of the model's own subscores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Discrepancy {
    pub kind: DiscrepancyKind,
    pub magnitude: i64,
}

/// Problems in a parsed output that do not make it unusable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditFlag {
    /// Reasoning quotes text that is not in the student response.
    UngroundedCitation { slot: String, quote: String },
    /// Reasoning concludes a different score than the one reported.
    VerdictMismatch { slot: String, stated: i64, score: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ScoredResult {
    pub response_id: String,
    pub llm: LlmResult,
    /// Points-weighted sum of the predicted subscores.
    pub subscore_sum: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<ScoreVector>,
    /// Per-slot agreement with the human label; present iff `human` is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matches: Option<BTreeMap<String, bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<Discrepancy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditFlag>,
}

impl ScoredResult {
    pub fn fully_correct(&self) -> Option<bool> {
        self.matches.as_ref().map(|m| m.values().all(|&ok| ok))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "stage", content = "error", rename_all = "snake_case")]
pub enum ResponseFailure {
    Gateway(GatewayError),
    Parse(ParseError),
    /// The response is not in the data set the run was started with.
    MissingResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RunErrorEntry {
    pub response_id: String,
    pub failure: ResponseFailure,
    /// Raw model text when the failure happened after a completion came back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub config_name: String,
    pub config_version: u32,
    pub assessment_id: String,
    pub rubric_id: String,
    pub provider_id: String,
    pub split_id: String,
    /// Responses the run covers, sorted.
    pub response_ids: Vec<String>,
    pub parallelism: usize,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    pub result_count: usize,
    pub error_count: usize,
}

/// Manifest plus the per-response records, as persisted under `runs/<id>/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RunRecord {
    pub manifest: RunManifest,
    pub results: Vec<ScoredResult>,
    pub errors: Vec<RunErrorEntry>,
}

impl RunRecord {
    pub fn result(&self, response_id: &str) -> Option<&ScoredResult> {
        self.results.iter().find(|r| r.response_id == response_id)
    }

    pub fn is_complete(&self) -> bool {
        self.manifest.status == RunStatus::Complete
    }

    /// Loads `runs/<id>/`. Unparseable trailing JSONL lines (a torn write)
    /// are ignored so an interrupted run can resume.
    pub fn load(dir: &Path) -> std::io::Result<RunRecord> {
        let manifest_text = std::fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: RunManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(RunRecord {
            manifest,
            results: read_jsonl(&dir.join(RESULTS))?,
            errors: read_jsonl(&dir.join(ERRORS))?,
        })
    }
}

pub(crate) const MANIFEST: &str = "manifest.json";
pub(crate) const RESULTS: &str = "results.jsonl";
pub(crate) const ERRORS: &str = "errors.jsonl";

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}

pub(crate) fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}
