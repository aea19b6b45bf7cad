use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::rubric::Rubric;
use crate::runner::RunRecord;

pub const DEFAULT_TREND_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Overscoring,
    Underscoring,
    Balanced,
}

/// Labels an error tally. Overscoring needs `fp >= threshold * fn` with at
/// least one false positive, underscoring the mirror image; anything else,
/// including a tie that satisfies both, is balanced.
pub fn trend_label(fp: usize, fn_count: usize, threshold: f64) -> TrendLabel {
    let over = fp > 0 && fp as f64 >= threshold * fn_count as f64;
    let under = fn_count > 0 && fn_count as f64 >= threshold * fp as f64;
    match (over, under) {
        (true, false) => TrendLabel::Overscoring,
        (false, true) => TrendLabel::Underscoring,
        _ => TrendLabel::Balanced,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CriterionTrend {
    pub criterion_id: String,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub label: TrendLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrendReport {
    pub run_id: String,
    pub threshold: f64,
    pub criteria: Vec<CriterionTrend>,
    /// Tallies summed over all criteria.
    pub overall: CriterionTrend,
}

impl TrendReport {
    pub fn label_of(&self, slot: &str) -> Option<TrendLabel> {
        self.criteria
            .iter()
            .find(|c| c.criterion_id == slot)
            .map(|c| c.label)
    }
}

pub fn detect_trends(run: &RunRecord, rubric: &Rubric, threshold: f64) -> TrendReport {
    let mut criteria: Vec<CriterionTrend> = rubric
        .slots()
        .into_iter()
        .map(|s| CriterionTrend {
            criterion_id: s.to_string(),
            fp: 0,
            fn_count: 0,
            label: TrendLabel::Balanced,
        })
        .collect();
    for r in &run.results {
        let Some(human) = &r.human else { continue };
        for c in &mut criteria {
            let (Some(h), Some(p)) = (human.get(&c.criterion_id), r.llm.score(&c.criterion_id)) else {
                continue;
            };
            if p > h {
                c.fp += 1;
            } else if p < h {
                c.fn_count += 1;
            }
        }
    }
    for c in &mut criteria {
        c.label = trend_label(c.fp, c.fn_count, threshold);
    }
    let fp = criteria.iter().map(|c| c.fp).sum();
    let fn_count = criteria.iter().map(|c| c.fn_count).sum();
    TrendReport {
        run_id: run.manifest.run_id.clone(),
        threshold,
        overall: CriterionTrend {
            criterion_id: "overall".into(),
            fp,
            fn_count,
            label: trend_label(fp, fn_count, threshold),
        },
        criteria,
    }
}
