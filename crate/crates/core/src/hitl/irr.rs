//! Inter-rater reliability sessions gated on Cohen's kappa.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::round_half_up;
use crate::metrics::{cohen_kappa, quadratic_weighted_kappa, LabelSeries};
use crate::rubric::{Rubric, RubricError, ScoreVector};

pub const KAPPA_GATE: f64 = 0.70;
pub const DEFAULT_IRR_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum IrrStatus {
    Open,
    NeedsResample,
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct KappaResult {
    /// Unweighted Cohen's kappa over pooled decisions; this drives the gate.
    pub kappa: f64,
    /// Quadratic weighted kappa on the same pairs, for reference.
    pub qwk: f64,
    /// Per-criterion kappa (multi-label rubrics only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_criterion: BTreeMap<String, f64>,
    pub pairs: usize,
    pub consensus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IrrRound {
    pub round: u32,
    pub seed: u64,
    pub sampled_ids: Vec<String>,
    /// rater → response id → scores.
    pub scores: BTreeMap<String, BTreeMap<String, ScoreVector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<KappaResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Resolution {
    pub round: u32,
    pub response_id: String,
    pub criterion_id: String,
    /// rater → label at the time of resolution.
    pub rater_labels: BTreeMap<String, i64>,
    pub consensus: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticking_point_id: Option<String>,
    pub resolved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IrrSession {
    pub id: String,
    pub assessment_id: String,
    pub rubric_id: String,
    pub raters: [String; 2],
    pub fraction: f64,
    pub seed: u64,
    pub population: usize,
    pub status: IrrStatus,
    pub rounds: Vec<IrrRound>,
    /// One kappa per completed round, in order.
    pub kappa_history: Vec<f64>,
    pub resolutions: Vec<Resolution>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "code", content = "detail")]
pub enum IrrError {
    #[error("sample of {fraction} of {population} responses is empty")]
    InsufficientData { fraction: f64, population: usize },
    #[error("a session needs two distinct, named raters")]
    BadRaters,
    #[error("unknown rater {0:?}")]
    UnknownRater(String),
    #[error("response {0:?} is not in the current sample")]
    NotSampled(String),
    #[error("scores are invalid: {0}")]
    InvalidScores(String),
    #[error("rater {rater:?} has not scored {response_id:?}")]
    IncompleteScoring { rater: String, response_id: String },
    #[error("no disagreement on {criterion_id:?} for {response_id:?}")]
    NoSuchDisagreement {
        response_id: String,
        criterion_id: String,
    },
    #[error("session already reached consensus")]
    SessionClosed,
    #[error("the current round has not been scored yet")]
    RoundNotScored,
}

impl From<RubricError> for IrrError {
    fn from(e: RubricError) -> Self {
        IrrError::InvalidScores(e.to_string())
    }
}

/// Seeded sample of `round_half_up(fraction * N)` ids, returned sorted.
pub fn sample_ids(ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>, IrrError> {
    let k = if fraction > 0.0 && fraction <= 1.0 {
        round_half_up(fraction, ids.len())
    } else {
        0
    };
    if k == 0 {
        return Err(IrrError::InsufficientData {
            fraction,
            population: ids.len(),
        });
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let mut sample: Vec<String> = sorted.into_iter().take(k).collect();
    sample.sort();
    Ok(sample)
}

impl IrrSession {
    pub fn open(
        id: &str,
        assessment_id: &str,
        rubric: &Rubric,
        response_ids: &[String],
        fraction: f64,
        seed: u64,
        raters: [String; 2],
    ) -> Result<IrrSession, IrrError> {
        if raters[0].trim().is_empty() || raters[1].trim().is_empty() || raters[0] == raters[1] {
            return Err(IrrError::BadRaters);
        }
        let sampled = sample_ids(response_ids, fraction, seed)?;
        Ok(IrrSession {
            id: id.to_string(),
            assessment_id: assessment_id.to_string(),
            rubric_id: rubric.id().to_string(),
            raters,
            fraction,
            seed,
            population: response_ids.len(),
            status: IrrStatus::Open,
            rounds: vec![IrrRound {
                round: 1,
                seed,
                sampled_ids: sampled,
                scores: BTreeMap::new(),
                result: None,
            }],
            kappa_history: Vec::new(),
            resolutions: Vec::new(),
            created_at: Utc::now(),
        })
    }

    pub fn current(&self) -> &IrrRound {
        self.rounds.last().expect("session has a round")
    }

    fn current_mut(&mut self) -> &mut IrrRound {
        self.rounds.last_mut().expect("session has a round")
    }

    /// Every id sampled in any round. These must never reach a test split.
    pub fn sampled_ids(&self) -> BTreeSet<String> {
        self.rounds
            .iter()
            .flat_map(|r| r.sampled_ids.iter().cloned())
            .collect()
    }

    pub fn record_scores(
        &mut self,
        rubric: &Rubric,
        rater: &str,
        response_id: &str,
        scores: ScoreVector,
    ) -> Result<(), IrrError> {
        if self.status == IrrStatus::Consensus {
            return Err(IrrError::SessionClosed);
        }
        if !self.raters.iter().any(|r| r == rater) {
            return Err(IrrError::UnknownRater(rater.to_string()));
        }
        if !self.current().sampled_ids.iter().any(|id| id == response_id) {
            return Err(IrrError::NotSampled(response_id.to_string()));
        }
        scores.check_against(rubric)?;
        let round = self.current_mut();
        round
            .scores
            .entry(rater.to_string())
            .or_default()
            .insert(response_id.to_string(), scores);
        round.result = None;
        Ok(())
    }

    fn labels(&self, rater: &str, response_id: &str) -> Result<&ScoreVector, IrrError> {
        self.current()
            .scores
            .get(rater)
            .and_then(|m| m.get(response_id))
            .ok_or_else(|| IrrError::IncompleteScoring {
                rater: rater.to_string(),
                response_id: response_id.to_string(),
            })
    }

    /// Computes the round's kappa and applies the gate. Multi-label rubrics
    /// pool every (response, criterion) decision into one binary table.
    pub fn compute_kappa(&mut self, rubric: &Rubric) -> Result<KappaResult, IrrError> {
        let [a, b] = self.raters.clone();
        let mut pooled = Vec::new();
        let mut per_slot: BTreeMap<String, Vec<(i64, i64)>> = BTreeMap::new();
        for id in &self.current().sampled_ids {
            let la = self.labels(&a, id)?;
            let lb = self.labels(&b, id)?;
            for slot in rubric.slots() {
                let pair = (la.values[slot], lb.values[slot]);
                pooled.push(pair);
                per_slot.entry(slot.to_string()).or_default().push(pair);
            }
        }
        let (lo, hi) = rubric.slot_range();
        let err = |e: crate::metrics::MetricsError| IrrError::InvalidScores(e.to_string());
        let series = LabelSeries::new(pooled, lo, hi).map_err(err)?;
        let kappa = cohen_kappa(&series);
        let qwk = quadratic_weighted_kappa(&series).map_err(err)?;
        let per_criterion = if rubric.is_multi_label() {
            per_slot
                .into_iter()
                .map(|(slot, pairs)| Ok((slot, cohen_kappa(&LabelSeries::new(pairs, lo, hi).map_err(err)?))))
                .collect::<Result<_, IrrError>>()?
        } else {
            BTreeMap::new()
        };
        let result = KappaResult {
            kappa,
            qwk,
            per_criterion,
            pairs: series.len(),
            consensus: kappa >= KAPPA_GATE,
        };
        let first_time = self.current().result.is_none();
        self.current_mut().result = Some(result.clone());
        if first_time {
            self.kappa_history.push(kappa);
        } else if let Some(last) = self.kappa_history.last_mut() {
            *last = kappa;
        }
        self.status = if result.consensus {
            IrrStatus::Consensus
        } else {
            IrrStatus::NeedsResample
        };
        Ok(result)
    }

    /// Starts a new round after a failed gate, drawing a fresh sample.
    pub fn resample(&mut self, response_ids: &[String]) -> Result<&IrrRound, IrrError> {
        match self.status {
            IrrStatus::Consensus => return Err(IrrError::SessionClosed),
            IrrStatus::Open => return Err(IrrError::RoundNotScored),
            IrrStatus::NeedsResample => {}
        }
        let round = self.rounds.len() as u32 + 1;
        let seed = self.seed.wrapping_add(round as u64 - 1);
        let sampled = sample_ids(response_ids, self.fraction, seed)?;
        self.rounds.push(IrrRound {
            round,
            seed,
            sampled_ids: sampled,
            scores: BTreeMap::new(),
            result: None,
        });
        self.status = IrrStatus::Open;
        Ok(self.current())
    }

    /// Coordinates where the two raters currently disagree.
    pub fn disagreements(&self) -> Vec<(String, String)> {
        let [a, b] = &self.raters;
        let round = self.current();
        let mut out = Vec::new();
        for id in &round.sampled_ids {
            let (Some(la), Some(lb)) = (
                round.scores.get(a).and_then(|m| m.get(id)),
                round.scores.get(b).and_then(|m| m.get(id)),
            ) else {
                continue;
            };
            for (slot, va) in &la.values {
                if lb.values.get(slot) != Some(va) {
                    out.push((id.clone(), slot.clone()));
                }
            }
        }
        out
    }

    /// Stores a consensus label for a disagreeing coordinate. Rater scores,
    /// and therefore kappa, are left as recorded.
    pub fn resolve(
        &mut self,
        rubric: &Rubric,
        response_id: &str,
        criterion_id: &str,
        consensus: i64,
        note: Option<String>,
    ) -> Result<&Resolution, IrrError> {
        let not_found = || IrrError::NoSuchDisagreement {
            response_id: response_id.to_string(),
            criterion_id: criterion_id.to_string(),
        };
        if !self
            .disagreements()
            .iter()
            .any(|(r, c)| r == response_id && c == criterion_id)
        {
            return Err(not_found());
        }
        if self
            .resolutions
            .iter()
            .any(|r| r.round == self.current().round && r.response_id == response_id && r.criterion_id == criterion_id)
        {
            return Err(not_found());
        }
        let (lo, hi) = rubric.slot_range();
        if consensus < lo || consensus > hi {
            return Err(IrrError::InvalidScores(format!("consensus {consensus} outside [{lo}, {hi}]")));
        }
        let round = self.current();
        let rater_labels = self
            .raters
            .iter()
            .map(|r| (r.clone(), round.scores[r][response_id].values[criterion_id]))
            .collect();
        self.resolutions.push(Resolution {
            round: round.round,
            response_id: response_id.to_string(),
            criterion_id: criterion_id.to_string(),
            rater_labels,
            consensus,
            note: note.filter(|n| !n.trim().is_empty()),
            sticking_point_id: None,
            resolved_at: Utc::now(),
        });
        Ok(self.resolutions.last().expect("just pushed"))
    }

    /// Consensus labels for the sampled responses: agreed values, with
    /// resolved disagreements filled in. Unresolved coordinates are absent.
    pub fn consensus_labels(&self) -> BTreeMap<String, BTreeMap<String, i64>> {
        let [a, b] = &self.raters;
        let mut out: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
        for round in &self.rounds {
            for id in &round.sampled_ids {
                let (Some(la), Some(lb)) = (
                    round.scores.get(a).and_then(|m| m.get(id)),
                    round.scores.get(b).and_then(|m| m.get(id)),
                ) else {
                    continue;
                };
                for (slot, va) in &la.values {
                    if lb.values.get(slot) == Some(va) {
                        out.entry(id.clone()).or_default().insert(slot.clone(), *va);
                    }
                }
            }
        }
        for r in &self.resolutions {
            out.entry(r.response_id.clone())
                .or_default()
                .insert(r.criterion_id.clone(), r.consensus);
        }
        out
    }
}
