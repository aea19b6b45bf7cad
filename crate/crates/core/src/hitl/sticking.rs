//! Sticking points: recurring disagreements recorded during IRR, each with
//! the resolution the raters settled on.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rubric::Rubric;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct StickingSource {
    pub session_id: String,
    pub response_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct StickingPoint {
    pub id: String,
    pub rubric_id: String,
    pub description: String,
    pub affected_criteria: Vec<String>,
    pub resolution: String,
    /// Appended to the rubric's guidelines when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<String>,
    /// Exemplar that illustrates the resolution, if one was added.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<StickingSource>,
}

/// Fields a rater supplies when turning a resolution into a sticking point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct StickingPointDraft {
    pub description: String,
    #[serde(default)]
    pub resolution: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "code", content = "detail")]
pub enum StickingPointError {
    #[error("sticking point id is empty")]
    EmptyId,
    #[error("sticking point {0:?} has an empty description")]
    EmptyDescription(String),
    #[error("sticking point {0:?} names no criteria")]
    NoCriteria(String),
    #[error("sticking point {id:?} names unknown criterion {criterion:?}")]
    UnknownCriterion { id: String, criterion: String },
    #[error("sticking point {id:?} belongs to rubric {found:?}, not {expected:?}")]
    WrongRubric {
        id: String,
        expected: String,
        found: String,
    },
}

impl StickingPoint {
    pub fn validate(&self, rubric: &Rubric) -> Result<(), StickingPointError> {
        if self.id.trim().is_empty() {
            return Err(StickingPointError::EmptyId);
        }
        if self.rubric_id != rubric.id() {
            return Err(StickingPointError::WrongRubric {
                id: self.id.clone(),
                expected: rubric.id().to_string(),
                found: self.rubric_id.clone(),
            });
        }
        if self.description.trim().is_empty() {
            return Err(StickingPointError::EmptyDescription(self.id.clone()));
        }
        if self.affected_criteria.is_empty() {
            return Err(StickingPointError::NoCriteria(self.id.clone()));
        }
        if let Some(c) = self.affected_criteria.iter().find(|c| !rubric.has_slot(c)) {
            return Err(StickingPointError::UnknownCriterion {
                id: self.id.clone(),
                criterion: c.clone(),
            });
        }
        Ok(())
    }
}

/// Rubric with the guidelines of `points` appended in id order.
pub fn effective_rubric(rubric: &Rubric, points: &[StickingPoint]) -> Rubric {
    let mut sorted: Vec<&StickingPoint> = points
        .iter()
        .filter(|p| p.rubric_id == rubric.id())
        .collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let extra: Vec<String> = sorted
        .into_iter()
        .filter_map(|p| p.guideline.clone())
        .filter(|g| !g.trim().is_empty() && !rubric.guidelines().contains(g))
        .collect();
    rubric
        .with_guidelines(extra)
        .expect("appending non-empty guidelines keeps a rubric valid")
}
