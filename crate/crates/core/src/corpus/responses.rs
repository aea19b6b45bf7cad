use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rubric::{Rubric, RubricError, ScoreVector, ORDINAL_SLOT};

/// One student's answer to one assessment. Matches the JSONL row schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct StudentResponse {
    pub id: String,
    pub assessment_id: String,
    /// Labeled text fields in display order, e.g. `Answer`, `Explanation`.
    pub parts: IndexMap<String, String>,
    /// Human scores keyed by slot id (`score` for ordinal rubrics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_scores: Option<BTreeMap<String, i64>>,
}

impl StudentResponse {
    pub fn new<'a, I>(id: &str, assessment_id: &str, parts: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        StudentResponse {
            id: id.to_string(),
            assessment_id: assessment_id.to_string(),
            parts: parts
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            human_scores: None,
        }
    }

    pub fn with_scores(mut self, scores: &ScoreVector) -> Self {
        self.human_scores = Some(scores.values.clone());
        self
    }

    pub fn has_content(&self) -> bool {
        self.parts.values().any(|t| !t.trim().is_empty())
    }

    /// True when `needle` occurs verbatim inside one of the parts.
    pub fn contains_verbatim(&self, needle: &str) -> bool {
        !needle.is_empty() && self.parts.values().any(|t| t.contains(needle))
    }

    /// Human labels as a validated score vector.
    pub fn human_vector(&self, rubric: &Rubric) -> Result<Option<ScoreVector>, RubricError> {
        self.human_scores
            .as_ref()
            .map(|values| ScoreVector::new(rubric, values.clone()))
            .transpose()
    }

    /// Parts rendered as `Label: text` lines; a single unlabeled-looking
    /// part is still labeled so the model sees a stable shape.
    pub fn render(&self) -> String {
        self.parts
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unknown response format {other:?}")),
        }
    }
}

/// Why a row was not turned into a response. Rows are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowError {
    #[error("row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("row {row}: duplicate response id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: unknown assessment {assessment_id:?}")]
    UnknownAssessment { row: usize, assessment_id: String },
    #[error("row {row}: invalid human scores: {message}")]
    InvalidScores { row: usize, message: String },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Immutable collection of responses with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSet {
    responses: Vec<StudentResponse>,
}

impl ResponseSet {
    /// Builds a set, returning the first duplicate id on failure.
    pub fn new(responses: Vec<StudentResponse>) -> Result<Self, String> {
        let mut seen = BTreeSet::new();
        for r in &responses {
            if !seen.insert(r.id.as_str()) {
                return Err(r.id.clone());
            }
        }
        Ok(ResponseSet { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StudentResponse> {
        self.responses.iter()
    }

    pub fn get(&self, id: &str) -> Option<&StudentResponse> {
        self.responses.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.responses.iter().map(|r| r.id.clone()).collect()
    }

    pub fn subset(&self, ids: &BTreeSet<String>) -> ResponseSet {
        ResponseSet {
            responses: self
                .responses
                .iter()
                .filter(|r| ids.contains(&r.id))
                .cloned()
                .collect(),
        }
    }

    pub fn into_vec(self) -> Vec<StudentResponse> {
        self.responses
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.responses {
            out.push_str(&serde_json::to_string(r).expect("response serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub responses: ResponseSet,
    pub errors: Vec<RowError>,
}

/// Reads responses from a file. `rubrics` maps assessment id to its rubric
/// and decides which assessments are known.
pub fn ingest_responses(
    path: &Path,
    format: InputFormat,
    rubrics: &BTreeMap<String, Rubric>,
) -> Result<Ingested, IngestError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(ingest_str(&text, format, rubrics))
}

pub fn ingest_str(text: &str, format: InputFormat, rubrics: &BTreeMap<String, Rubric>) -> Ingested {
    let rows = match format {
        InputFormat::Jsonl => parse_jsonl(text),
        InputFormat::Csv => parse_csv(text),
    };
    let mut out = Ingested::default();
    let mut seen = BTreeSet::new();
    let mut accepted = Vec::new();
    for (row, parsed) in rows {
        let resp = match parsed {
            Ok(r) => r,
            Err(message) => {
                out.errors.push(RowError::ParseError { row, message });
                continue;
            }
        };
        if !resp.has_content() {
            out.errors.push(RowError::ParseError {
                row,
                message: "response has no nonempty part".into(),
            });
            continue;
        }
        let Some(rubric) = rubrics.get(&resp.assessment_id) else {
            out.errors.push(RowError::UnknownAssessment {
                row,
                assessment_id: resp.assessment_id.clone(),
            });
            continue;
        };
        if let Err(e) = resp.human_vector(rubric) {
            out.errors.push(RowError::InvalidScores {
                row,
                message: e.to_string(),
            });
            continue;
        }
        if !seen.insert(resp.id.clone()) {
            out.errors.push(RowError::DuplicateId { row, id: resp.id });
            continue;
        }
        accepted.push(resp);
    }
    out.responses = ResponseSet { responses: accepted };
    out
}

fn parse_jsonl(text: &str) -> Vec<(usize, Result<StudentResponse, String>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parsed = serde_json::from_str::<StudentResponse>(l).map_err(|e| e.to_string());
            (i + 1, parsed.and_then(check_id))
        })
        .collect()
}

fn check_id(r: StudentResponse) -> Result<StudentResponse, String> {
    if r.id.trim().is_empty() {
        Err("response id is empty".into())
    } else {
        Ok(r)
    }
}

/// Column prefix marking a human score column, e.g. `human.R3` or `human.score`.
pub const CSV_SCORE_PREFIX: &str = "human.";

fn parse_csv(text: &str) -> Vec<(usize, Result<StudentResponse, String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return vec![(1, Err(e.to_string()))],
    };
    if headers.is_empty() {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let parsed = record.map_err(|e| e.to_string()).and_then(|rec| {
            let mut id = None;
            let mut assessment = None;
            let mut parts = IndexMap::new();
            let mut scores = BTreeMap::new();
            for (name, value) in headers.iter().zip(rec.iter()) {
                match name {
                    "id" => id = Some(value.to_string()),
                    "assessment_id" => assessment = Some(value.to_string()),
                    n if n.starts_with(CSV_SCORE_PREFIX) => {
                        if value.trim().is_empty() {
                            continue;
                        }
                        let slot = &n[CSV_SCORE_PREFIX.len()..];
                        let v: i64 = value
                            .trim()
                            .parse()
                            .map_err(|_| format!("score column {n} is not an integer"))?;
                        scores.insert(if slot.is_empty() { ORDINAL_SLOT.to_string() } else { slot.to_string() }, v);
                    }
                    n => {
                        parts.insert(n.to_string(), value.to_string());
                    }
                }
            }
            check_id(StudentResponse {
                id: id.ok_or("missing id column")?,
                assessment_id: assessment.ok_or("missing assessment_id column")?,
                parts,
                human_scores: (!scores.is_empty()).then_some(scores),
            })
        });
        rows.push((row, parsed));
    }
    rows
}
