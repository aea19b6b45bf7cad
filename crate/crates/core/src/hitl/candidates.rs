use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::trends::{TrendLabel, TrendReport};
use crate::rubric::{total_score, Rubric};
use crate::runner::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CandidateWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CandidateWeights {
    fn default() -> Self {
        CandidateWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDirection {
    FalsePositive,
    FalseNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SlotError {
    pub criterion_id: String,
    pub human: i64,
    pub predicted: i64,
    pub direction: ErrorDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Candidate {
    pub response_id: String,
    pub score: f64,
    pub human_total: i64,
    pub llm_total: i64,
    /// `|human_total - llm_total|`, using the model's reported total.
    pub total_delta: i64,
    /// Erring criteria whose direction matches the overall trend.
    pub trend_match_count: usize,
    /// Erring criteria whose own trend label is not balanced.
    pub struggling_criterion_hits: usize,
    pub errors: Vec<SlotError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CandidateRanking {
    pub run_id: String,
    pub weights: CandidateWeights,
    pub overall_trend: TrendLabel,
    /// Set when the run was not on a validation split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub candidates: Vec<Candidate>,
}

/// Scores every misscored, labeled result and sorts by score descending,
/// then response id ascending.
pub fn rank_candidates(
    run: &RunRecord,
    rubric: &Rubric,
    trend: &TrendReport,
    weights: CandidateWeights,
) -> CandidateRanking {
    let overall = trend.overall.label;
    let mut candidates = Vec::new();
    for r in &run.results {
        let Some(human) = &r.human else { continue };
        let errors: Vec<SlotError> = rubric
            .slots()
            .into_iter()
            .filter_map(|slot| {
                let (h, p) = (human.get(slot)?, r.llm.score(slot)?);
                (h != p).then(|| SlotError {
                    criterion_id: slot.to_string(),
                    human: h,
                    predicted: p,
                    direction: if p > h {
                        ErrorDirection::FalsePositive
                    } else {
                        ErrorDirection::FalseNegative
                    },
                })
            })
            .collect();
        if errors.is_empty() {
            continue;
        }
        let Ok(human_total) = total_score(rubric, human) else {
            continue;
        };
        let total_delta = (human_total - r.llm.reported_total).abs();
        let trend_match_count = errors
            .iter()
            .filter(|e| {
                matches!(
                    (e.direction, overall),
                    (ErrorDirection::FalsePositive, TrendLabel::Overscoring)
                        | (ErrorDirection::FalseNegative, TrendLabel::Underscoring)
                )
            })
            .count();
        let struggling_criterion_hits = errors
            .iter()
            .filter(|e| {
                trend
                    .label_of(&e.criterion_id)
                    .is_some_and(|l| l != TrendLabel::Balanced)
            })
            .count();
        let score = weights.alpha * total_delta as f64
            + weights.beta * trend_match_count as f64
            + weights.gamma * struggling_criterion_hits as f64;
        candidates.push(Candidate {
            response_id: r.response_id.clone(),
            score,
            human_total,
            llm_total: r.llm.reported_total,
            total_delta,
            trend_match_count,
            struggling_criterion_hits,
            errors,
        });
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.response_id.cmp(&b.response_id))
    });
    let warning = (!is_validation_split(&run.manifest.split_id)).then(|| {
        format!(
            "run {} scored split {:?}, not a validation split; promoting from it may leak evaluation data",
            run.manifest.run_id, run.manifest.split_id
        )
    });
    CandidateRanking {
        run_id: run.manifest.run_id.clone(),
        weights,
        overall_trend: overall,
        warning,
        candidates,
    }
}

/// Split ids have the form `<assessment>/<partition>/<fingerprint>`.
pub fn is_validation_split(split_id: &str) -> bool {
    split_id.split('/').nth(1) == Some("validation")
}
