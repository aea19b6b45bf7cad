//! Prompt rendering.

mod assemble;
pub mod block_code;
mod config;
pub mod cot;
mod tokens;

pub use assemble::{
    assemble_prompt, exemplar_output, render_resolved, render_rubric, render_user_message,
    ExemplarSpan, Prompt, SectionCost, SectionSpan,
};
pub use block_code::{encode_block_code, BlockCodeListing, CodeLine, ListingError};
pub use config::{
    resolve_config, BlockKind, ContextExtra, LinkedContext, PromptConfig, PromptSources,
    ResolvedConfig, DEFAULT_TOKEN_BUDGET,
};
pub use cot::{render_cot, CotError, DEFAULT_COT_TEMPLATE};
pub use tokens::{estimate_tokens, CharHeuristic, TokenEstimator};

use thiserror::Error;

use crate::corpus::BalanceViolation;
use crate::rubric::RubricError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("invalid prompt config: {0}")]
    InvalidConfig(String),
    #[error("unknown assessment {0:?}")]
    UnknownAssessment(String),
    #[error("unknown rubric {0:?}")]
    UnknownRubric(String),
    #[error("unknown exemplar {0:?}")]
    UnknownExemplar(String),
    #[error("exemplar {0:?} is invalid: {1}")]
    InvalidExemplar(String, String),
    #[error("linked assessment {0:?} (or its rubric) is missing")]
    MissingLinkedContext(String),
    #[error("exemplars are unbalanced: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Unbalanced(Vec<BalanceViolation>),
    #[error(transparent)]
    Listing(#[from] ListingError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(
        "prompt needs {estimated} tokens plus {reserve} reserved for output, over the \
         {budget}-token budget by {overshoot}; largest parts: {}",
        .largest.iter().map(|c| format!("{} ({})", c.name, c.tokens)).collect::<Vec<_>>().join(", ")
    )]
    TokenBudgetExceeded {
        estimated: usize,
        reserve: usize,
        budget: usize,
        overshoot: usize,
        largest: Vec<SectionCost>,
    },
}
