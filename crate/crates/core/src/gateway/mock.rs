//! Offline providers for tests and demos.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::provider::{CompletionRequest, FinishReason, GatewayError, Provider, RawCompletion};
use super::schema::{OutputCriterion, OutputDocument};
use crate::corpus::{ExemplarKind, StudentResponse};
use crate::rubric::{total_score, Rubric, ScoreVector};

fn labels_of<'a, I>(rubric: &Rubric, responses: I) -> BTreeMap<String, ScoreVector>
where
    I: IntoIterator<Item = &'a StudentResponse>,
{
    responses
        .into_iter()
        .filter_map(|r| {
            r.human_vector(rubric)
                .ok()
                .flatten()
                .map(|v| (r.id.clone(), v))
        })
        .collect()
}

fn document(rubric: &Rubric, scores: &BTreeMap<String, i64>, note: &str) -> OutputDocument {
    let criteria = rubric
        .slots()
        .into_iter()
        .map(|slot| {
            let score = scores[slot];
            OutputCriterion {
                id: slot.to_string(),
                reasoning: format!("{note} for {slot}. Based on the rubric, the student earned a score of {score}."),
                score,
            }
        })
        .collect();
    let sv = ScoreVector {
        rubric_id: rubric.id().to_string(),
        values: scores.clone(),
    };
    OutputDocument {
        criteria,
        total_score: total_score(rubric, &sv).unwrap_or_else(|_| scores.values().sum()),
    }
}

/// Answers every request with the response's human labels.
pub struct EchoLabels {
    rubric: Rubric,
    labels: BTreeMap<String, ScoreVector>,
}

impl EchoLabels {
    pub fn new<'a, I>(rubric: &Rubric, responses: I) -> Self
    where
        I: IntoIterator<Item = &'a StudentResponse>,
    {
        EchoLabels {
            rubric: rubric.clone(),
            labels: labels_of(rubric, responses),
        }
    }
}

impl Provider for EchoLabels {
    fn id(&self) -> String {
        format!("echo-labels:{}", self.rubric.id())
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let labels = self
            .labels
            .get(&request.response_id)
            .ok_or_else(|| GatewayError::Mock(format!("no human label for {}", request.response_id)))?;
        let doc = document(&self.rubric, &labels.values, "Echoing the human label");
        Ok(RawCompletion::stop(
            serde_json::to_string_pretty(&doc).expect("document serializes"),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedFixture {
    Text(String),
    Full {
        text: String,
        #[serde(default = "stop")]
        finish_reason: FinishReason,
    },
}

fn stop() -> FinishReason {
    FinishReason::Stop
}

/// Looks completions up by response id. The fixture file is a JSON object
/// mapping ids to either the completion text or `{text, finish_reason}`.
pub struct Scripted {
    id: String,
    fixtures: BTreeMap<String, ScriptedFixture>,
}

impl Scripted {
    pub fn new(id: impl Into<String>, fixtures: BTreeMap<String, ScriptedFixture>) -> Self {
        Scripted {
            id: id.into(),
            fixtures,
        }
    }

    pub fn from_json(id: impl Into<String>, json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(id, serde_json::from_str(json)?))
    }
}

impl Provider for Scripted {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        match self.fixtures.get(&request.response_id) {
            Some(ScriptedFixture::Text(text)) => Ok(RawCompletion::stop(text.clone())),
            Some(ScriptedFixture::Full {
                text,
                finish_reason,
            }) => Ok(RawCompletion {
                text: text.clone(),
                finish_reason: *finish_reason,
                usage: None,
                latency_ms: 0,
            }),
            None => Err(GatewayError::Mock(format!("no fixture for {}", request.response_id))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Malformed,
    Truncated,
    OutOfRange,
}

/// Human labels, corrupted in three controlled ways:
///
/// * each response is independently faulted with probability `fault_rate`,
///   decided by a hash of `(seed, response id)` so the set is fixed per seed;
/// * every slot in `overscore` is reported as 1 when the human gave 0;
/// * that over-scoring stops for a slot once the system prompt carries an
///   active-learning example whose expected output scores the slot 0.
pub struct Faulty {
    rubric: Rubric,
    labels: BTreeMap<String, ScoreVector>,
    seed: u64,
    fault_rate: f64,
    overscore: BTreeSet<String>,
}

impl Faulty {
    pub fn new<'a, I>(rubric: &Rubric, responses: I, seed: u64, fault_rate: f64, overscore: &[String]) -> Self
    where
        I: IntoIterator<Item = &'a StudentResponse>,
    {
        Faulty {
            rubric: rubric.clone(),
            labels: labels_of(rubric, responses),
            seed,
            fault_rate,
            overscore: overscore.iter().cloned().collect(),
        }
    }

    fn draw(&self, response_id: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(response_id.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
    }

    /// The fault injected for `response_id`, if any.
    pub fn fault_for(&self, response_id: &str) -> Option<FaultKind> {
        let x = self.draw(response_id);
        let u = (x >> 11) as f64 / (1u64 << 53) as f64;
        if u >= self.fault_rate {
            return None;
        }
        Some(match x % 3 {
            0 => FaultKind::Malformed,
            1 => FaultKind::Truncated,
            _ => FaultKind::OutOfRange,
        })
    }

    /// Slots the prompt's active-learning examples teach to score 0.
    fn corrected_slots(system: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let marker = format!("({})", ExemplarKind::ActiveLearning.label());
        for chunk in system.split("## Example ").skip(1) {
            let header = chunk.lines().next().unwrap_or_default();
            if !header.contains(&marker) {
                continue;
            }
            let Some(at) = chunk.find("Expected output:") else {
                continue;
            };
            let rest = &chunk[at..];
            let Some(open) = rest.find('{') else { continue };
            let mut stream =
                serde_json::Deserializer::from_str(&rest[open..]).into_iter::<OutputDocument>();
            if let Some(Ok(doc)) = stream.next() {
                out.extend(doc.criteria.into_iter().filter(|c| c.score == 0).map(|c| c.id));
            }
        }
        out
    }
}

impl Provider for Faulty {
    fn id(&self) -> String {
        let slots: Vec<&str> = self.overscore.iter().map(String::as_str).collect();
        format!(
            "faulty:{}:seed={}:rate={}:over={}",
            self.rubric.id(),
            self.seed,
            self.fault_rate,
            slots.join("+")
        )
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let labels = self
            .labels
            .get(&request.response_id)
            .ok_or_else(|| GatewayError::Mock(format!("no human label for {}", request.response_id)))?;
        let corrected = Self::corrected_slots(&request.system);
        let mut scores = labels.values.clone();
        let (_, hi) = self.rubric.slot_range();
        for slot in &self.overscore {
            if corrected.contains(slot) {
                continue;
            }
            if let Some(v) = scores.get_mut(slot) {
                if *v < hi {
                    *v += 1;
                }
            }
        }
        let doc = document(&self.rubric, &scores, "Scored");
        let text = serde_json::to_string_pretty(&doc).expect("document serializes");
        Ok(match self.fault_for(&request.response_id) {
            None => RawCompletion::stop(text),
            Some(FaultKind::Malformed) => {
                RawCompletion::stop("I could not decide on a score for this response.")
            }
            Some(FaultKind::Truncated) => RawCompletion {
                text: text[..text.len() / 2].to_string(),
                finish_reason: FinishReason::Length,
                usage: None,
                latency_ms: 0,
            },
            Some(FaultKind::OutOfRange) => {
                let mut doc = doc;
                doc.criteria[0].score = hi + 1;
                RawCompletion::stop(serde_json::to_string_pretty(&doc).expect("document serializes"))
            }
        })
    }
}
