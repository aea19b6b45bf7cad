use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::StudentResponse;
use crate::prompt::cot::stated_verdict;
use crate::rubric::{Rubric, RubricError, ScoreVector, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarKind {
    GroundTruth,
    StickingPoint,
    Balance,
    ActiveLearning,
}

impl ExemplarKind {
    pub fn label(self) -> &'static str {
        match self {
            ExemplarKind::GroundTruth => "ground truth",
            ExemplarKind::StickingPoint => "sticking point",
            ExemplarKind::Balance => "balance",
            ExemplarKind::ActiveLearning => "active learning",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            ExemplarKind::GroundTruth,
            ExemplarKind::StickingPoint,
            ExemplarKind::Balance,
            ExemplarKind::ActiveLearning,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }
}

impl fmt::Display for ExemplarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Reasoning for one score slot. `citations` are the verbatim student
/// spans the text relies on; a chain about something the student omitted
/// may have none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct CotChain {
    pub slot: String,
    pub text: String,
    #[serde(default)]
    pub citations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Exemplar {
    pub id: String,
    pub kind: ExemplarKind,
    pub response: StudentResponse,
    pub labels: ScoreVector,
    /// One chain per slot, in rubric order.
    pub chains: Vec<CotChain>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExemplarError {
    #[error("exemplar id is empty")]
    EmptyId,
    #[error("labels: {0}")]
    Labels(#[from] RubricError),
    #[error("no reasoning chain for {0:?}")]
    MissingChain(String),
    #[error("reasoning chain for unknown or repeated slot {0:?}")]
    UnexpectedChain(String),
    #[error("reasoning chain for {0:?} is empty")]
    EmptyChain(String),
    #[error("citation {citation:?} in chain {slot:?} is not a verbatim substring of the response")]
    CitationNotFound { slot: String, citation: String },
    #[error("citation {citation:?} is not present in the chain text for {slot:?}")]
    CitationNotInText { slot: String, citation: String },
    #[error("chain for {slot:?} concludes {stated} but the label is {label}")]
    VerdictMismatch { slot: String, stated: i64, label: i64 },
}

impl Exemplar {
    pub fn chain(&self, slot: &str) -> Option<&CotChain> {
        self.chains.iter().find(|c| c.slot == slot)
    }

    /// Checks labels, full chain coverage, citation grounding and that any
    /// stated verdict agrees with the label.
    pub fn validate(&self, rubric: &Rubric) -> Result<(), ExemplarError> {
        if self.id.trim().is_empty() {
            return Err(ExemplarError::EmptyId);
        }
        self.labels.check_against(rubric)?;
        let slots = rubric.slots();
        let mut seen = BTreeSet::new();
        for chain in &self.chains {
            if !slots.contains(&chain.slot.as_str()) || !seen.insert(chain.slot.as_str()) {
                return Err(ExemplarError::UnexpectedChain(chain.slot.clone()));
            }
            if chain.text.trim().is_empty() {
                return Err(ExemplarError::EmptyChain(chain.slot.clone()));
            }
            for c in &chain.citations {
                if !self.response.contains_verbatim(c) {
                    return Err(ExemplarError::CitationNotFound {
                        slot: chain.slot.clone(),
                        citation: c.clone(),
                    });
                }
                if !chain.text.contains(c.as_str()) {
                    return Err(ExemplarError::CitationNotInText {
                        slot: chain.slot.clone(),
                        citation: c.clone(),
                    });
                }
            }
            let label = self.labels.values[&chain.slot];
            if let Some(stated) = stated_verdict(&chain.text) {
                if stated != label {
                    return Err(ExemplarError::VerdictMismatch {
                        slot: chain.slot.clone(),
                        stated,
                        label,
                    });
                }
            }
        }
        if let Some(missing) = slots.iter().find(|s| !seen.contains(*s)) {
            return Err(ExemplarError::MissingChain(missing.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PolarityCount {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceViolation {
    MissingPositive { slot: String },
    MissingNegative { slot: String },
    MissingScore { score: i64 },
}

impl fmt::Display for BalanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceViolation::MissingPositive { slot } => write!(f, "no positive exemplar for {slot}"),
            BalanceViolation::MissingNegative { slot } => write!(f, "no negative exemplar for {slot}"),
            BalanceViolation::MissingScore { score } => write!(f, "no exemplar scored {score}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct BalanceReport {
    /// Multi-label rubrics: positive/negative counts per criterion.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_criterion: BTreeMap<String, PolarityCount>,
    /// Ordinal rubrics: exemplar count per score.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_score: BTreeMap<i64, usize>,
    pub violations: Vec<BalanceViolation>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Requires at least one positive and one negative exemplar per criterion,
/// or at least one exemplar per score level.
pub fn check_balance(exemplars: &[Exemplar], rubric: &Rubric) -> Result<BalanceReport, RubricError> {
    for e in exemplars {
        e.labels.check_against(rubric)?;
    }
    let mut report = BalanceReport {
        per_criterion: BTreeMap::new(),
        per_score: BTreeMap::new(),
        violations: Vec::new(),
    };
    match rubric.scheme() {
        Scheme::MultiLabelBinary { criteria } => {
            for c in criteria {
                let mut count = PolarityCount::default();
                for e in exemplars {
                    if e.labels.values[&c.id] > 0 {
                        count.positive += 1;
                    } else {
                        count.negative += 1;
                    }
                }
                if count.positive == 0 {
                    report.violations.push(BalanceViolation::MissingPositive { slot: c.id.clone() });
                }
                if count.negative == 0 {
                    report.violations.push(BalanceViolation::MissingNegative { slot: c.id.clone() });
                }
                report.per_criterion.insert(c.id.clone(), count);
            }
        }
        Scheme::MultiClassOrdinal { min, max, .. } => {
            for s in *min..=*max {
                report.per_score.insert(s, 0);
            }
            for e in exemplars {
                *report.per_score.entry(e.labels.values[crate::rubric::ORDINAL_SLOT]).or_default() += 1;
            }
            for (score, n) in &report.per_score {
                if *n == 0 {
                    report.violations.push(BalanceViolation::MissingScore { score: *score });
                }
            }
        }
    }
    Ok(report)
}
