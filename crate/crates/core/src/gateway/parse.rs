use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::provider::{FinishReason, RawCompletion};
use super::schema::{OutputCriterion, OutputDocument};
use crate::rubric::{max_score, min_score, Rubric};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct CriterionResult {
    pub id: String,
    pub score: i64,
    pub reasoning: String,
}

/// A parsed, validated model answer. `criteria` follow rubric order and
/// `reported_total` is the model's own claim, never recomputed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct LlmResult {
    pub criteria: Vec<CriterionResult>,
    pub reported_total: i64,
    pub raw: RawCompletion,
}

impl LlmResult {
    pub fn scores(&self) -> BTreeMap<String, i64> {
        self.criteria.iter().map(|c| (c.id.clone(), c.score)).collect()
    }

    pub fn score(&self, slot: &str) -> Option<i64> {
        self.criteria.iter().find(|c| c.id == slot).map(|c| c.score)
    }

    pub fn reasoning(&self, slot: &str) -> Option<&str> {
        self.criteria
            .iter()
            .find(|c| c.id == slot)
            .map(|c| c.reasoning.as_str())
    }

    pub fn to_document(&self) -> OutputDocument {
        OutputDocument {
            criteria: self
                .criteria
                .iter()
                .map(|c| OutputCriterion {
                    id: c.id.clone(),
                    reasoning: c.reasoning.clone(),
                    score: c.score,
                })
                .collect(),
            total_score: self.reported_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "code", content = "detail")]
pub enum ParseError {
    #[error("no valid output document: {0}")]
    MalformedDocument(String),
    #[error("output is missing criterion {0:?}")]
    MissingCriterion(String),
    #[error("output has unknown criterion {0:?}")]
    ExtraCriterion(String),
    #[error("score {score} for {id:?} is out of range")]
    ScoreOutOfRange { id: String, score: i64 },
    #[error("generation was cut off at the output token limit")]
    Truncated,
}

/// The first JSON object in `text` that has the output document's shape.
/// Prose, code fences and unrelated objects around it are skipped.
pub fn extract_document(text: &str) -> Result<OutputDocument, ParseError> {
    let mut last_error = None;
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        if !(value.get("criteria").is_some() && value.get("total_score").is_some()) {
            continue;
        }
        match serde_json::from_value::<OutputDocument>(value) {
            Ok(doc) => return Ok(doc),
            Err(e) => {
                last_error.get_or_insert(e.to_string());
            }
        }
    }
    Err(ParseError::MalformedDocument(
        last_error.unwrap_or_else(|| "no object with criteria and total_score".to_string()),
    ))
}

pub fn parse_output(raw: &RawCompletion, rubric: &Rubric) -> Result<LlmResult, ParseError> {
    match raw.finish_reason {
        FinishReason::Length => return Err(ParseError::Truncated),
        FinishReason::Error => {
            return Err(ParseError::MalformedDocument("provider reported an error".into()))
        }
        FinishReason::Stop => {}
    }
    let doc = extract_document(&raw.text)?;
    let slots = rubric.slots();
    let (lo, hi) = rubric.slot_range();
    let mut by_id: BTreeMap<&str, &OutputCriterion> = BTreeMap::new();
    for c in &doc.criteria {
        if !slots.contains(&c.id.as_str()) {
            return Err(ParseError::ExtraCriterion(c.id.clone()));
        }
        if by_id.insert(c.id.as_str(), c).is_some() {
            return Err(ParseError::MalformedDocument(format!("criterion {:?} repeated", c.id)));
        }
        if c.score < lo || c.score > hi {
            return Err(ParseError::ScoreOutOfRange {
                id: c.id.clone(),
                score: c.score,
            });
        }
        if c.reasoning.trim().is_empty() {
            return Err(ParseError::MalformedDocument(format!("empty reasoning for {:?}", c.id)));
        }
    }
    let present: BTreeSet<&str> = by_id.keys().copied().collect();
    if let Some(missing) = slots.iter().find(|s| !present.contains(*s)) {
        return Err(ParseError::MissingCriterion(missing.to_string()));
    }
    if doc.total_score < min_score(rubric) || doc.total_score > max_score(rubric) {
        return Err(ParseError::ScoreOutOfRange {
            id: "total_score".into(),
            score: doc.total_score,
        });
    }
    Ok(LlmResult {
        criteria: slots
            .iter()
            .map(|s| {
                let c = by_id[s];
                CriterionResult {
                    id: c.id.clone(),
                    score: c.score,
                    reasoning: c.reasoning.clone(),
                }
            })
            .collect(),
        reported_total: doc.total_score,
        raw: raw.clone(),
    })
}
