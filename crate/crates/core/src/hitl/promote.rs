//! Turning a ranked candidate into an active-learning exemplar.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::candidates::CandidateRanking;
use crate::corpus::{CotChain, Exemplar, ExemplarError, ExemplarKind, StudentResponse};
use crate::prompt::cot::stated_verdict;
use crate::prompt::{PromptConfig, PromptError};
use crate::rubric::Rubric;
use crate::runner::RunRecord;

/// Reasoning a human writes for one misscored slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ChainInput {
    pub slot: String,
    pub text: String,
    #[serde(default)]
    pub citations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PromotionRequest {
    pub run_id: String,
    pub response_id: String,
    /// Chains for the slots the model got wrong. Others may be included.
    pub chains: Vec<ChainInput>,
    /// Defaults to `al-<response_id>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Promotion {
    pub exemplar: Exemplar,
    pub config: PromptConfig,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "code", content = "detail")]
pub enum PromotionError {
    #[error("run {run_id:?} used config {run_config:?}, but the active config is {active_config:?}; score with the active config before promoting again")]
    IterationQuotaExceeded {
        run_id: String,
        run_config: String,
        active_config: String,
    },
    #[error("response {0:?} is not a candidate in this run")]
    NotACandidate(String),
    #[error("no reasoning chain for misscored slot {0:?}")]
    MissingChain(String),
    #[error("citation {citation:?} for {slot:?} is not a verbatim substring of the response")]
    CitationNotFound { slot: String, citation: String },
    #[error("invalid exemplar: {0}")]
    Exemplar(String),
    #[error("updated prompt is invalid: {0}")]
    Prompt(String),
    #[error("exemplar {0:?} is already in the prompt")]
    AlreadyExemplar(String),
    #[error("storage failed: {0}")]
    Store(String),
}

impl From<PromptError> for PromotionError {
    fn from(e: PromptError) -> Self {
        PromotionError::Prompt(e.to_string())
    }
}

/// Closing line of a chain written for a slot the model already scored correctly.
pub fn verdict_only_chain(value: i64) -> String {
    format!("Based on the rubric, the student earned a score of {value}.")
}

/// Builds the exemplar and the next config version. Nothing is written.
pub fn build_promotion(
    request: &PromotionRequest,
    run: &RunRecord,
    ranking: &CandidateRanking,
    active: &PromptConfig,
    active_hash: &str,
    rubric: &Rubric,
    response: &StudentResponse,
) -> Result<Promotion, PromotionError> {
    if run.manifest.config_hash != active_hash {
        return Err(PromotionError::IterationQuotaExceeded {
            run_id: run.manifest.run_id.clone(),
            run_config: run.manifest.config_hash.clone(),
            active_config: active_hash.to_string(),
        });
    }
    let candidate = ranking
        .candidates
        .iter()
        .find(|c| c.response_id == request.response_id)
        .ok_or_else(|| PromotionError::NotACandidate(request.response_id.clone()))?;
    let exemplar_id = request
        .exemplar_id
        .clone()
        .unwrap_or_else(|| format!("al-{}", request.response_id));
    if active.exemplar_ids.contains(&exemplar_id) {
        return Err(PromotionError::AlreadyExemplar(exemplar_id));
    }
    let labels = response
        .human_vector(rubric)
        .map_err(|e| PromotionError::Exemplar(e.to_string()))?
        .ok_or_else(|| PromotionError::NotACandidate(request.response_id.clone()))?;

    for err in &candidate.errors {
        if !request.chains.iter().any(|c| c.slot == err.criterion_id) {
            return Err(PromotionError::MissingChain(err.criterion_id.clone()));
        }
    }
    let mut chains = Vec::new();
    for slot in rubric.slots() {
        let chain = match request.chains.iter().find(|c| c.slot == slot) {
            Some(input) => {
                if let Some(c) = input
                    .citations
                    .iter()
                    .find(|c| !response.contains_verbatim(c))
                {
                    return Err(PromotionError::CitationNotFound {
                        slot: slot.to_string(),
                        citation: c.clone(),
                    });
                }
                let mut text = input.text.trim().to_string();
                if stated_verdict(&text).is_none() {
                    text.push(' ');
                    text.push_str(&verdict_only_chain(labels.values[slot]));
                }
                CotChain {
                    slot: slot.to_string(),
                    text,
                    citations: input.citations.clone(),
                }
            }
            None => CotChain {
                slot: slot.to_string(),
                text: verdict_only_chain(labels.values[slot]),
                citations: Vec::new(),
            },
        };
        chains.push(chain);
    }
    if let Some(extra) = request.chains.iter().find(|c| !rubric.has_slot(&c.slot)) {
        return Err(PromotionError::Exemplar(
            ExemplarError::UnexpectedChain(extra.slot.clone()).to_string(),
        ));
    }
    let exemplar = Exemplar {
        id: exemplar_id.clone(),
        kind: ExemplarKind::ActiveLearning,
        response: response.clone(),
        labels,
        chains,
    };
    exemplar
        .validate(rubric)
        .map_err(|e| PromotionError::Exemplar(e.to_string()))?;

    let mut config = active.clone();
    config.version += 1;
    config.exemplar_ids.push(exemplar_id);
    config.validate()?;
    Ok(Promotion { exemplar, config })
}
