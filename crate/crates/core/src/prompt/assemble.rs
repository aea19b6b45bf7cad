use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::{resolve_config, BlockKind, PromptSources, ResolvedConfig};
use super::{encode_block_code, CharHeuristic, PromptError, TokenEstimator};
use crate::corpus::{check_balance, Exemplar, StudentResponse};
use crate::gateway::{OutputCriterion, OutputDocument};
use crate::rubric::{total_score, Assessment, Rubric, Scheme};

/// Byte span of one rendered block inside [`Prompt::text`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SectionSpan {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ExemplarSpan {
    pub exemplar_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Prompt {
    /// System prompt text. The student response goes in a separate user
    /// message, see [`render_user_message`].
    pub text: String,
    pub sections: Vec<SectionSpan>,
    pub exemplars: Vec<ExemplarSpan>,
    pub estimated_tokens: usize,
    pub config_hash: String,
}

impl Prompt {
    pub fn section(&self, kind: BlockKind) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| &self.text[s.start..s.end])
    }

    pub fn kinds(&self) -> Vec<BlockKind> {
        self.sections.iter().map(|s| s.kind).collect()
    }
}

/// Token count attributed to one part of an over-budget prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SectionCost {
    pub name: String,
    pub tokens: usize,
}

pub fn assemble_prompt<S: PromptSources + ?Sized>(
    config: &super::PromptConfig,
    sources: &S,
) -> Result<Prompt, PromptError> {
    let resolved = resolve_config(config, sources)?;
    render_resolved(&resolved, &CharHeuristic)
}

/// Renders a resolved config. Pure: the output depends only on `resolved`
/// and the estimator.
pub fn render_resolved(
    resolved: &ResolvedConfig,
    estimator: &dyn TokenEstimator,
) -> Result<Prompt, PromptError> {
    let config = &resolved.config;
    if config.has_block(BlockKind::FewShot) && !config.allow_unbalanced {
        let report = check_balance(&resolved.exemplars, &resolved.rubric)?;
        if !report.is_balanced() {
            return Err(PromptError::Unbalanced(report.violations));
        }
    }

    let mut blocks: Vec<(BlockKind, String)> = Vec::new();
    let mut exemplar_offsets: Vec<(String, usize, usize)> = Vec::new();
    for &kind in &config.block_order {
        let body = match kind {
            BlockKind::Persona => Some(config.persona_text.trim().to_string()),
            BlockKind::ContextManager => Some(render_context(resolved)),
            BlockKind::MetaLanguage => match &resolved.assessment.code_listing {
                Some(listing) => Some(encode_block_code(listing)?),
                None => {
                    return Err(PromptError::InvalidConfig(format!(
                        "meta_language block requested but assessment {} has no code listing",
                        resolved.assessment.id
                    )))
                }
            },
            BlockKind::Guidelines => render_guidelines(resolved.rubric.guidelines()),
            BlockKind::OutputTemplate => Some(render_output_template(config)),
            BlockKind::FewShot => {
                if resolved.exemplars.is_empty() {
                    None
                } else {
                    let (body, offsets) = render_few_shot(&resolved.exemplars, &resolved.rubric)?;
                    exemplar_offsets = offsets;
                    Some(body)
                }
            }
        };
        if let Some(body) = body {
            blocks.push((kind, format!("{}\n\n{}", kind.heading(), body)));
        }
    }

    let mut text = String::new();
    let mut sections = Vec::new();
    let mut exemplars = Vec::new();
    for (kind, block) in &blocks {
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        let start = text.len();
        text.push_str(block);
        if *kind == BlockKind::FewShot {
            let body_start = start + kind.heading().len() + 2;
            for (id, s, e) in &exemplar_offsets {
                exemplars.push(ExemplarSpan {
                    exemplar_id: id.clone(),
                    start: body_start + s,
                    end: body_start + e,
                });
            }
        }
        sections.push(SectionSpan {
            kind: *kind,
            start,
            end: text.len(),
        });
    }
    text.push('\n');

    let estimated_tokens = estimator.estimate(&text);
    let budget = config.token_budget;
    if estimated_tokens + config.output_reserve > budget {
        let mut costs: Vec<SectionCost> = sections
            .iter()
            .map(|s| SectionCost {
                name: s.kind.to_string(),
                tokens: estimator.estimate(&text[s.start..s.end]),
            })
            .chain(exemplars.iter().map(|e| SectionCost {
                name: format!("exemplar {}", e.exemplar_id),
                tokens: estimator.estimate(&text[e.start..e.end]),
            }))
            .collect();
        costs.sort_by(|a, b| b.tokens.cmp(&a.tokens).then_with(|| a.name.cmp(&b.name)));
        costs.truncate(3);
        return Err(PromptError::TokenBudgetExceeded {
            estimated: estimated_tokens,
            reserve: config.output_reserve,
            budget,
            overshoot: estimated_tokens + config.output_reserve - budget,
            largest: costs,
        });
    }

    Ok(Prompt {
        text,
        sections,
        exemplars,
        estimated_tokens,
        config_hash: resolved.hash(),
    })
}

/// The per-response user message sent alongside the system prompt.
pub fn render_user_message(response: &StudentResponse) -> String {
    format!(
        "Score the following student response.\n\n{}\n",
        response.render()
    )
}

pub fn render_rubric(rubric: &Rubric) -> String {
    let mut lines = Vec::new();
    match rubric.scheme() {
        Scheme::MultiLabelBinary { criteria } => {
            for c in criteria {
                let domains: Vec<String> = c.domains.iter().map(|d| d.to_string()).collect();
                let pts = if c.points == 1 { "1 point".to_string() } else { format!("{} points", c.points) };
                lines.push(format!("- {} [{}] ({pts}): {}", c.id, domains.join(", "), c.description));
            }
        }
        Scheme::MultiClassOrdinal { levels, .. } => {
            for l in levels.iter().rev() {
                lines.push(format!("- Score {}: {}", l.score, l.description));
            }
        }
    }
    lines.join("\n")
}

fn render_assessment(a: &Assessment, include_background: bool, include_gold: bool) -> Vec<String> {
    let mut parts = Vec::new();
    if include_background && !a.background.trim().is_empty() {
        parts.push(format!("Background:\n{}", a.background.trim()));
    }
    parts.push(format!("Question:\n{}", a.question.trim()));
    if include_gold {
        parts.push(format!("Gold-standard response:\n{}", a.gold_response.trim()));
    }
    parts
}

fn render_context(resolved: &ResolvedConfig) -> String {
    let config = &resolved.config;
    let a = &resolved.assessment;
    let mut parts = Vec::new();
    if !a.title.trim().is_empty() {
        parts.push(format!("Task: {}", a.title.trim()));
    }
    parts.extend(render_assessment(a, config.include_background, config.include_gold_response));
    parts.push(format!("Rubric ({}):\n{}", resolved.rubric.id(), render_rubric(&resolved.rubric)));
    for extra in &config.context_extras {
        parts.push(format!("{}:\n{}", extra.title.trim(), extra.text.trim()));
    }
    for linked in &resolved.linked {
        let la = &linked.assessment;
        let mut sub = vec![format!(
            "Related task {}{}:",
            la.id,
            if la.title.trim().is_empty() { String::new() } else { format!(" ({})", la.title.trim()) }
        )];
        sub.extend(render_assessment(la, config.include_background, config.include_gold_response));
        sub.push(format!("Rubric ({}):\n{}", linked.rubric.id(), render_rubric(&linked.rubric)));
        parts.push(sub.join("\n\n"));
    }
    parts.join("\n\n")
}

fn render_guidelines(guidelines: &[String]) -> Option<String> {
    if guidelines.is_empty() {
        return None;
    }
    Some(
        guidelines
            .iter()
            .enumerate()
            .map(|(i, g)| format!("{}. {}", i + 1, g.trim()))
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

fn render_output_template(config: &super::PromptConfig) -> String {
    format!(
        "Reply with one JSON document that conforms to the schema below. Give one entry in \
\"criteria\" per rubric item, in rubric order. Write each \"reasoning\" field in this form:\n\
{}\n\nSchema:\n{}",
        config.cot_template.trim(),
        config.output_schema.trim()
    )
}

/// The output document an exemplar's labels and chains correspond to.
pub fn exemplar_output(exemplar: &Exemplar, rubric: &Rubric) -> Result<OutputDocument, PromptError> {
    let criteria = rubric
        .slots()
        .into_iter()
        .map(|slot| {
            let chain = exemplar
                .chain(slot)
                .ok_or_else(|| PromptError::InvalidExemplar(exemplar.id.clone(), format!("no chain for {slot}")))?;
            Ok(OutputCriterion {
                id: slot.to_string(),
                reasoning: chain.text.clone(),
                score: exemplar.labels.values[slot],
            })
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    Ok(OutputDocument {
        criteria,
        total_score: total_score(rubric, &exemplar.labels)?,
    })
}

type Offsets = Vec<(String, usize, usize)>;

fn render_few_shot(exemplars: &[Exemplar], rubric: &Rubric) -> Result<(String, Offsets), PromptError> {
    let mut out = String::new();
    let mut offsets = Vec::new();
    for (i, e) in exemplars.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let start = out.len();
        let doc = exemplar_output(e, rubric)?;
        out.push_str(&format!(
            "## Example {} ({})\n\nStudent response:\n{}\n\nExpected output:\n{}",
            i + 1,
            e.kind.label(),
            e.response.render(),
            serde_json::to_string_pretty(&doc).expect("output document serializes")
        ));
        offsets.push((e.id.clone(), start, out.len()));
    }
    Ok((out, offsets))
}
