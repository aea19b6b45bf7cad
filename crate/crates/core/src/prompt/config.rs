use std::collections::BTreeSet;
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{PromptError, DEFAULT_COT_TEMPLATE};
use crate::corpus::{Exemplar, ExemplarSource};
use crate::rubric::{Assessment, Rubric};
use crate::util::sha256_hex;

pub const DEFAULT_TOKEN_BUDGET: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Persona,
    ContextManager,
    MetaLanguage,
    Guidelines,
    OutputTemplate,
    FewShot,
}

impl BlockKind {
    /// The only order blocks are ever rendered in.
    pub const CANONICAL: [BlockKind; 6] = [
        BlockKind::Persona,
        BlockKind::ContextManager,
        BlockKind::MetaLanguage,
        BlockKind::Guidelines,
        BlockKind::OutputTemplate,
        BlockKind::FewShot,
    ];

    pub const REQUIRED: [BlockKind; 3] = [
        BlockKind::Persona,
        BlockKind::ContextManager,
        BlockKind::OutputTemplate,
    ];

    pub fn heading(self) -> &'static str {
        match self {
            BlockKind::Persona => "# Role",
            BlockKind::ContextManager => "# Context",
            BlockKind::MetaLanguage => "# Code",
            BlockKind::Guidelines => "# Guidelines",
            BlockKind::OutputTemplate => "# Output format",
            BlockKind::FewShot => "# Examples",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ContextExtra {
    pub title: String,
    pub text: String,
}

fn default_version() -> u32 {
    1
}

fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}

fn default_template() -> String {
    DEFAULT_COT_TEMPLATE.to_string()
}

fn yes() -> bool {
    true
}

/// Everything needed to render a task prompt, minus the referenced documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PromptConfig {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub assessment_id: String,
    pub rubric_id: String,
    pub block_order: Vec<BlockKind>,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
    #[serde(default = "default_template")]
    pub cot_template: String,
    /// JSON Schema for the output document, kept as text and rendered verbatim.
    pub output_schema: String,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    /// Tokens kept free for the model's answer inside `token_budget`.
    #[serde(default)]
    pub output_reserve: usize,
    pub persona_text: String,
    #[serde(default)]
    pub context_extras: Vec<ContextExtra>,
    #[serde(default = "yes")]
    pub include_background: bool,
    #[serde(default = "yes")]
    pub include_gold_response: bool,
    /// Render even if the exemplars fail the balance check.
    #[serde(default)]
    pub allow_unbalanced: bool,
}

impl PromptConfig {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let config: PromptConfig =
            toml::from_str(text).map_err(|e| PromptError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::InvalidConfig(m));
        if self.name.trim().is_empty() {
            return bad("config name is empty".into());
        }
        for required in BlockKind::REQUIRED {
            if !self.block_order.contains(&required) {
                return bad(format!("block_order must include {required}"));
            }
        }
        let positions: Vec<usize> = self
            .block_order
            .iter()
            .map(|k| BlockKind::CANONICAL.iter().position(|c| c == k).expect("kind is canonical"))
            .collect();
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "block_order must follow {:?} without repeats",
                BlockKind::CANONICAL
            ));
        }
        if !self.exemplar_ids.is_empty() && !self.block_order.contains(&BlockKind::FewShot) {
            return bad("exemplars listed but few_shot block omitted".into());
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.exemplar_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return bad(format!("exemplar {dup:?} listed twice"));
        }
        if self.token_budget == 0 {
            return bad("token_budget must be positive".into());
        }
        if self.persona_text.trim().is_empty() {
            return bad("persona_text is empty".into());
        }
        match serde_json::from_str::<serde_json::Value>(&self.output_schema) {
            Ok(v) if v.is_object() => {}
            _ => return bad("output_schema must be a JSON object".into()),
        }
        Ok(())
    }

    pub fn has_block(&self, kind: BlockKind) -> bool {
        self.block_order.contains(&kind)
    }
}

/// Read access to everything a config refers to. Rubrics returned here are
/// *effective* rubrics, i.e. already carrying any adjudication guidelines.
pub trait PromptSources: ExemplarSource {
    fn rubric(&self, id: &str) -> Option<Rubric>;
    fn assessment(&self, id: &str) -> Option<Assessment>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LinkedContext {
    pub assessment: Assessment,
    pub rubric: Rubric,
}

/// A config together with snapshots of every document it references.
/// Rendering depends on nothing else, so its hash identifies the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ResolvedConfig {
    pub config: PromptConfig,
    pub rubric: Rubric,
    pub assessment: Assessment,
    pub linked: Vec<LinkedContext>,
    pub exemplars: Vec<Exemplar>,
}

impl ResolvedConfig {
    pub fn hash(&self) -> String {
        let doc = serde_json::to_vec(self).expect("resolved config serializes");
        sha256_hex(&doc)
    }

    pub fn exemplar_response_ids(&self) -> BTreeSet<String> {
        self.exemplars.iter().map(|e| e.response.id.clone()).collect()
    }
}

pub fn resolve_config<S: PromptSources + ?Sized>(
    config: &PromptConfig,
    sources: &S,
) -> Result<ResolvedConfig, PromptError> {
    config.validate()?;
    let assessment = sources
        .assessment(&config.assessment_id)
        .ok_or_else(|| PromptError::UnknownAssessment(config.assessment_id.clone()))?;
    if assessment.rubric_id != config.rubric_id {
        return Err(PromptError::InvalidConfig(format!(
            "assessment {} uses rubric {}, config names {}",
            assessment.id, assessment.rubric_id, config.rubric_id
        )));
    }
    let rubric = sources
        .rubric(&config.rubric_id)
        .ok_or_else(|| PromptError::UnknownRubric(config.rubric_id.clone()))?;
    let mut linked = Vec::new();
    for id in &assessment.linked_context {
        let a = sources
            .assessment(id)
            .ok_or_else(|| PromptError::MissingLinkedContext(id.clone()))?;
        let r = sources
            .rubric(&a.rubric_id)
            .ok_or_else(|| PromptError::MissingLinkedContext(id.clone()))?;
        linked.push(LinkedContext {
            assessment: a,
            rubric: r,
        });
    }
    let mut exemplars = Vec::new();
    for id in &config.exemplar_ids {
        let e = sources
            .exemplar(id)
            .ok_or_else(|| PromptError::UnknownExemplar(id.clone()))?;
        e.validate(&rubric)
            .map_err(|err| PromptError::InvalidExemplar(id.clone(), err.to_string()))?;
        exemplars.push(e);
    }
    Ok(ResolvedConfig {
        config: config.clone(),
        rubric,
        assessment,
        linked,
        exemplars,
    })
}
