//! Rubrics, criteria, assessments and score vectors.
//!
//! Both rubric schemes are exposed through a uniform set of *score slots*:
//! a multi-label rubric has one binary slot per criterion, an ordinal rubric
//! has a single slot named [`ORDINAL_SLOT`]. Everything downstream (parsing,
//! metrics, trends) works on slots and only consults the scheme for ranges
//! and totals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::BlockCodeListing;

/// Slot id used by ordinal rubrics, in score vectors and in model output.
pub const ORDINAL_SLOT: &str = "score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub enum Domain {
    #[serde(rename = "SCI")]
    Science,
    #[serde(rename = "COM")]
    Computing,
    #[serde(rename = "ENG")]
    Engineering,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Science => "SCI",
            Domain::Computing => "COM",
            Domain::Engineering => "ENG",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Criterion {
    pub id: String,
    pub description: String,
    pub domains: Vec<Domain>,
    #[serde(default = "one")]
    pub points: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct LevelDescription {
    pub score: i64,
    pub description: String,
    #[serde(default)]
    pub domains: Vec<Domain>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    MultiLabelBinary {
        criteria: Vec<Criterion>,
    },
    MultiClassOrdinal {
        min: i64,
        max: i64,
        /// One entry per score in `min..=max`, ordered by score.
        levels: Vec<LevelDescription>,
    },
}

/// Unchecked rubric document as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RawRubric {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub guidelines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RubricViolation {
    #[error("rubric id is empty")]
    EmptyRubricId,
    #[error("criterion id is empty")]
    EmptyCriterionId,
    #[error("duplicate criterion id {0:?}")]
    DuplicateCriterionId(String),
    #[error("criterion {0:?} has no domains")]
    NoDomains(String),
    #[error("criterion {0:?} must be worth at least one point")]
    ZeroPoints(String),
    #[error("scheme has no criteria")]
    EmptyScheme,
    #[error("missing description for level {0}")]
    MissingLevelDescription(i64),
    #[error("level {0} is outside the scheme range or duplicated")]
    UnexpectedLevel(i64),
    #[error("bad ordinal range: min {min} must be below max {max}")]
    BadRange { min: i64, max: i64 },
    #[error("guideline {0} is empty")]
    EmptyGuideline(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RubricError {
    #[error("rubric document could not be parsed: {0}")]
    Parse(String),
    #[error("invalid rubric: {}", join_violations(.0))]
    Invalid(Vec<RubricViolation>),
    #[error("score vector for rubric {found:?} used with rubric {expected:?}")]
    SchemeMismatch { expected: String, found: String },
    #[error("score vector is missing slot {0:?}")]
    MissingSlot(String),
    #[error("score vector has unknown slot {0:?}")]
    UnknownSlot(String),
    #[error("value {value} for {slot:?} is outside [{min}, {max}]")]
    ValueOutOfRange {
        slot: String,
        value: i64,
        min: i64,
        max: i64,
    },
}

fn join_violations(v: &[RubricViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A validated rubric. Construct it with [`validate_rubric`] or by
/// deserializing, which runs the same validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "RawRubric", into = "RawRubric")]
pub struct Rubric {
    id: String,
    title: String,
    scheme: Scheme,
    guidelines: Vec<String>,
}

impl TryFrom<RawRubric> for Rubric {
    type Error = RubricError;

    fn try_from(raw: RawRubric) -> Result<Self, Self::Error> {
        validate_rubric(raw)
    }
}

impl From<Rubric> for RawRubric {
    fn from(r: Rubric) -> Self {
        RawRubric {
            id: r.id,
            title: r.title,
            scheme: r.scheme,
            guidelines: r.guidelines,
        }
    }
}

/// Checks every rubric invariant and returns all violations at once.
pub fn validate_rubric(raw: RawRubric) -> Result<Rubric, RubricError> {
    let mut violations = Vec::new();
    if raw.id.trim().is_empty() {
        violations.push(RubricViolation::EmptyRubricId);
    }
    match &raw.scheme {
        Scheme::MultiLabelBinary { criteria } => {
            if criteria.is_empty() {
                violations.push(RubricViolation::EmptyScheme);
            }
            let mut seen = BTreeSet::new();
            for c in criteria {
                if c.id.trim().is_empty() {
                    violations.push(RubricViolation::EmptyCriterionId);
                    continue;
                }
                if !seen.insert(c.id.as_str()) {
                    violations.push(RubricViolation::DuplicateCriterionId(c.id.clone()));
                }
                if c.domains.is_empty() {
                    violations.push(RubricViolation::NoDomains(c.id.clone()));
                }
                if c.points == 0 {
                    violations.push(RubricViolation::ZeroPoints(c.id.clone()));
                }
            }
        }
        Scheme::MultiClassOrdinal { min, max, levels } => {
            if min >= max {
                violations.push(RubricViolation::BadRange {
                    min: *min,
                    max: *max,
                });
            } else {
                let mut present = BTreeSet::new();
                for l in levels {
                    if l.score < *min || l.score > *max || !present.insert(l.score) {
                        violations.push(RubricViolation::UnexpectedLevel(l.score));
                    }
                }
                for s in *min..=*max {
                    let described = levels
                        .iter()
                        .any(|l| l.score == s && !l.description.trim().is_empty());
                    if !described {
                        violations.push(RubricViolation::MissingLevelDescription(s));
                    }
                }
            }
        }
    }
    for (i, g) in raw.guidelines.iter().enumerate() {
        if g.trim().is_empty() {
            violations.push(RubricViolation::EmptyGuideline(i));
        }
    }
    if !violations.is_empty() {
        return Err(RubricError::Invalid(violations));
    }
    let mut scheme = raw.scheme;
    if let Scheme::MultiClassOrdinal { levels, .. } = &mut scheme {
        levels.sort_by_key(|l| l.score);
    }
    Ok(Rubric {
        id: raw.id,
        title: raw.title,
        scheme,
        guidelines: raw.guidelines,
    })
}

/// Parses and validates a TOML rubric document.
pub fn parse_rubric(text: &str) -> Result<Rubric, RubricError> {
    let raw: RawRubric = toml::from_str(text).map_err(|e| RubricError::Parse(e.to_string()))?;
    validate_rubric(raw)
}

impl Rubric {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn guidelines(&self) -> &[String] {
        &self.guidelines
    }

    pub fn is_multi_label(&self) -> bool {
        matches!(self.scheme, Scheme::MultiLabelBinary { .. })
    }

    /// Returns a copy with `extra` appended to the guideline list.
    pub fn with_guidelines<I>(&self, extra: I) -> Result<Rubric, RubricError>
    where
        I: IntoIterator<Item = String>,
    {
        let mut raw = RawRubric::from(self.clone());
        raw.guidelines.extend(extra);
        validate_rubric(raw)
    }

    /// Score slot ids in rubric order.
    pub fn slots(&self) -> Vec<&str> {
        match &self.scheme {
            Scheme::MultiLabelBinary { criteria } => criteria.iter().map(|c| c.id.as_str()).collect(),
            Scheme::MultiClassOrdinal { .. } => vec![ORDINAL_SLOT],
        }
    }

    pub fn has_slot(&self, slot: &str) -> bool {
        self.slots().contains(&slot)
    }

    /// Inclusive value range of a slot.
    pub fn slot_range(&self) -> (i64, i64) {
        match &self.scheme {
            Scheme::MultiLabelBinary { .. } => (0, 1),
            Scheme::MultiClassOrdinal { min, max, .. } => (*min, *max),
        }
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        match &self.scheme {
            Scheme::MultiLabelBinary { criteria } => criteria.iter().find(|c| c.id == id),
            Scheme::MultiClassOrdinal { .. } => None,
        }
    }

    /// Human-readable rubric text for a slot (criterion description, or the
    /// full level ladder for an ordinal rubric).
    pub fn clause(&self, slot: &str) -> Option<String> {
        match &self.scheme {
            Scheme::MultiLabelBinary { criteria } => criteria
                .iter()
                .find(|c| c.id == slot)
                .map(|c| c.description.clone()),
            Scheme::MultiClassOrdinal { levels, .. } if slot == ORDINAL_SLOT => Some(
                levels
                    .iter()
                    .rev()
                    .map(|l| format!("{} points: {}", l.score, l.description))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            Scheme::MultiClassOrdinal { .. } => None,
        }
    }

    fn points(&self, slot: &str) -> i64 {
        self.criterion(slot).map(|c| c.points as i64).unwrap_or(1)
    }
}

/// Highest attainable total.
pub fn max_score(rubric: &Rubric) -> i64 {
    match &rubric.scheme {
        Scheme::MultiLabelBinary { criteria } => criteria.iter().map(|c| c.points as i64).sum(),
        Scheme::MultiClassOrdinal { max, .. } => *max,
    }
}

/// Lowest attainable total.
pub fn min_score(rubric: &Rubric) -> i64 {
    match &rubric.scheme {
        Scheme::MultiLabelBinary { .. } => 0,
        Scheme::MultiClassOrdinal { min, .. } => *min,
    }
}

/// Points-weighted sum for multi-label rubrics; the single level for ordinal ones.
pub fn total_score(rubric: &Rubric, sv: &ScoreVector) -> Result<i64, RubricError> {
    sv.check_against(rubric)?;
    Ok(match &rubric.scheme {
        Scheme::MultiLabelBinary { .. } => sv
            .values
            .iter()
            .map(|(slot, v)| v * rubric.points(slot))
            .sum(),
        Scheme::MultiClassOrdinal { .. } => sv.values[ORDINAL_SLOT],
    })
}

/// Scores for one response against one rubric, keyed by slot id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct ScoreVector {
    pub rubric_id: String,
    pub values: BTreeMap<String, i64>,
}

impl ScoreVector {
    /// Builds a vector, rejecting missing keys, unknown keys and out-of-range values.
    pub fn new(rubric: &Rubric, values: BTreeMap<String, i64>) -> Result<Self, RubricError> {
        let sv = ScoreVector {
            rubric_id: rubric.id.clone(),
            values,
        };
        sv.check_against(rubric)?;
        Ok(sv)
    }

    pub fn ordinal(rubric: &Rubric, score: i64) -> Result<Self, RubricError> {
        Self::new(rubric, BTreeMap::from([(ORDINAL_SLOT.to_string(), score)]))
    }

    pub fn from_pairs<'a, I>(rubric: &Rubric, pairs: I) -> Result<Self, RubricError>
    where
        I: IntoIterator<Item = (&'a str, i64)>,
    {
        Self::new(
            rubric,
            pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        )
    }

    pub fn get(&self, slot: &str) -> Option<i64> {
        self.values.get(slot).copied()
    }

    pub fn check_against(&self, rubric: &Rubric) -> Result<(), RubricError> {
        if self.rubric_id != rubric.id {
            return Err(RubricError::SchemeMismatch {
                expected: rubric.id.clone(),
                found: self.rubric_id.clone(),
            });
        }
        let slots = rubric.slots();
        for key in self.values.keys() {
            if !slots.contains(&key.as_str()) {
                return Err(RubricError::UnknownSlot(key.clone()));
            }
        }
        let (min, max) = rubric.slot_range();
        for slot in slots {
            let value = *self
                .values
                .get(slot)
                .ok_or_else(|| RubricError::MissingSlot(slot.to_string()))?;
            if value < min || value > max {
                return Err(RubricError::ValueOutOfRange {
                    slot: slot.to_string(),
                    value,
                    min,
                    max,
                });
            }
        }
        Ok(())
    }
}

/// Unchecked assessment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Assessment {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub background: String,
    pub question: String,
    pub gold_response: String,
    pub rubric_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_listing: Option<BlockCodeListing>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linked_context: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssessmentError {
    #[error("assessment document could not be parsed: {0}")]
    Parse(String),
    #[error("assessment {0:?} has an empty question")]
    EmptyQuestion(String),
    #[error("assessment {0:?} has an empty gold response")]
    EmptyGoldResponse(String),
    #[error("assessment {assessment:?} references unknown rubric {rubric:?}")]
    UnknownRubric { assessment: String, rubric: String },
    #[error("assessment {assessment:?} links unknown assessment {linked:?}")]
    UnknownLinkedAssessment { assessment: String, linked: String },
    #[error("assessment {0:?} has an invalid code listing: {1}")]
    BadListing(String, String),
}

impl Assessment {
    pub fn parse(text: &str) -> Result<Self, AssessmentError> {
        toml::from_str(text).map_err(|e| AssessmentError::Parse(e.to_string()))
    }

    /// Checks field invariants and that referenced ids exist.
    pub fn validate(
        &self,
        known_rubrics: &BTreeSet<String>,
        known_assessments: &BTreeSet<String>,
    ) -> Result<(), AssessmentError> {
        if self.question.trim().is_empty() {
            return Err(AssessmentError::EmptyQuestion(self.id.clone()));
        }
        if self.gold_response.trim().is_empty() {
            return Err(AssessmentError::EmptyGoldResponse(self.id.clone()));
        }
        if !known_rubrics.contains(&self.rubric_id) {
            return Err(AssessmentError::UnknownRubric {
                assessment: self.id.clone(),
                rubric: self.rubric_id.clone(),
            });
        }
        for linked in &self.linked_context {
            if !known_assessments.contains(linked) {
                return Err(AssessmentError::UnknownLinkedAssessment {
                    assessment: self.id.clone(),
                    linked: linked.clone(),
                });
            }
        }
        if let Some(listing) = &self.code_listing {
            listing
                .validate()
                .map_err(|e| AssessmentError::BadListing(self.id.clone(), e.to_string()))?;
        }
        Ok(())
    }
}
