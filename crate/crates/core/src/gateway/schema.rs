//! The structured output document models are asked to produce.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::rubric::Rubric;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct OutputCriterion {
    pub id: String,
    pub reasoning: String,
    pub score: i64,
}

/// `{"criteria": [{"id", "reasoning", "score"}], "total_score"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct OutputDocument {
    pub criteria: Vec<OutputCriterion>,
    pub total_score: i64,
}

/// JSON Schema text for a rubric's output document, pretty-printed with
/// sorted keys so it can be pasted into config files and diffed.
pub fn output_schema_for(rubric: &Rubric) -> String {
    let (min, max) = rubric.slot_range();
    let ids: Vec<&str> = rubric.slots();
    let schema = json!({
        "type": "object",
        "required": ["criteria", "total_score"],
        "properties": {
            "criteria": {
                "type": "array",
                "minItems": ids.len(),
                "maxItems": ids.len(),
                "items": {
                    "type": "object",
                    "required": ["id", "reasoning", "score"],
                    "properties": {
                        "id": {"type": "string", "enum": ids},
                        "reasoning": {"type": "string", "minLength": 1},
                        "score": {"type": "integer", "minimum": min, "maximum": max}
                    }
                }
            },
            "total_score": {
                "type": "integer",
                "minimum": crate::rubric::min_score(rubric),
                "maximum": crate::rubric::max_score(rubric)
            }
        }
    });
    serde_json::to_string_pretty(&schema).expect("schema serializes")
}
