use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{accuracy, quadratic_weighted_kappa, LabelSeries, MetricsError};
use crate::rubric::{max_score, min_score, total_score, Rubric};
use crate::runner::{DiscrepancyKind, RunRecord};

/// Agreement on one score slot. Over-predictions count as false positives
/// and under-predictions as false negatives, for ordinal slots too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CriterionReport {
    pub criterion_id: String,
    pub n: usize,
    pub qwk: f64,
    pub accuracy: f64,
    pub fp_count: usize,
    pub fn_count: usize,
    pub correct: usize,
    pub min: i64,
    pub max: i64,
    /// Rows are human labels, columns predictions, both from `min` to `max`.
    pub confusion: Vec<Vec<u64>>,
}

impl CriterionReport {
    pub fn from_series(criterion_id: &str, series: &LabelSeries) -> Result<Self, MetricsError> {
        let (min, max) = series.range();
        let mut fp = 0;
        let mut fneg = 0;
        for &(h, p) in series.pairs() {
            if p > h {
                fp += 1;
            } else if p < h {
                fneg += 1;
            }
        }
        Ok(CriterionReport {
            criterion_id: criterion_id.to_string(),
            n: series.len(),
            qwk: quadratic_weighted_kappa(series)?,
            accuracy: accuracy(series),
            fp_count: fp,
            fn_count: fneg,
            correct: series.len() - fp - fneg,
            min,
            max,
            confusion: series.confusion(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct DiscrepancyCounts {
    pub under: usize,
    pub over: usize,
    /// Count per signed difference `reported_total - subscore_sum`.
    pub by_difference: BTreeMap<i64, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunMetrics {
    pub run_id: String,
    pub rubric_id: String,
    pub criteria: Vec<CriterionReport>,
    /// Mean of the per-criterion QWK values.
    pub avg_subscore_qwk: f64,
    /// Model's reported total against the human total, over the rubric's full range.
    pub total_score: CriterionReport,
    pub discrepancies: DiscrepancyCounts,
    pub labeled_pairs: usize,
    /// Split members without a parsed result (excluded from every metric).
    pub parse_failures: usize,
    /// Results without a human label (excluded from every metric).
    pub unlabeled: usize,
}

pub const TOTAL_SCORE_ROW: &str = "Total Score";

pub fn run_metrics(run: &RunRecord, rubric: &Rubric) -> Result<RunMetrics, MetricsError> {
    let (lo, hi) = rubric.slot_range();
    let slots = rubric.slots();
    let mut per_slot: BTreeMap<&str, Vec<(i64, i64)>> = slots.iter().map(|s| (*s, Vec::new())).collect();
    let mut totals = Vec::new();
    let mut unlabeled = 0;
    let mut discrepancies = DiscrepancyCounts::default();
    for r in &run.results {
        if let Some(d) = &r.discrepancy {
            let signed = match d.kind {
                DiscrepancyKind::Under => {
                    discrepancies.under += 1;
                    -d.magnitude
                }
                DiscrepancyKind::Over => {
                    discrepancies.over += 1;
                    d.magnitude
                }
            };
            *discrepancies.by_difference.entry(signed).or_default() += 1;
        }
        let Some(human) = &r.human else {
            unlabeled += 1;
            continue;
        };
        for slot in &slots {
            let (Some(h), Some(p)) = (human.get(slot), r.llm.score(slot)) else {
                continue;
            };
            per_slot.get_mut(slot).expect("slot listed").push((h, p));
        }
        let human_total = total_score(rubric, human).map_err(|_| MetricsError::ValueOutOfRange {
            human: 0,
            predicted: r.llm.reported_total,
            min: min_score(rubric),
            max: max_score(rubric),
        })?;
        totals.push((human_total, r.llm.reported_total));
    }
    if totals.is_empty() {
        return Err(MetricsError::NoLabeledPairs);
    }
    let criteria = slots
        .iter()
        .map(|s| CriterionReport::from_series(s, &LabelSeries::new(per_slot[s].clone(), lo, hi)?))
        .collect::<Result<Vec<_>, _>>()?;
    let total_series = LabelSeries::new(totals, min_score(rubric), max_score(rubric))?;
    let total = CriterionReport::from_series(TOTAL_SCORE_ROW, &total_series)?;
    let avg = criteria.iter().map(|c| c.qwk).sum::<f64>() / criteria.len() as f64;
    Ok(RunMetrics {
        run_id: run.manifest.run_id.clone(),
        rubric_id: rubric.id().to_string(),
        labeled_pairs: total.n,
        criteria,
        avg_subscore_qwk: avg,
        total_score: total,
        discrepancies,
        parse_failures: run.manifest.response_ids.len().saturating_sub(run.results.len()),
        unlabeled,
    })
}

/// Plain-text table: one row per criterion plus the total score row.
pub fn render_table(m: &RunMetrics) -> String {
    let mut rows = vec![[
        "Criterion".to_string(),
        "QWK".into(),
        "Accuracy".into(),
        "FP".into(),
        "FN".into(),
        "N".into(),
    ]];
    for c in m.criteria.iter().chain(std::iter::once(&m.total_score)) {
        rows.push([
            c.criterion_id.clone(),
            format!("{:.3}", c.qwk),
            format!("{:.3}", c.accuracy),
            c.fp_count.to_string(),
            c.fn_count.to_string(),
            c.n.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if k == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * 5));
            out.push('\n');
        }
    }
    out.push_str(&format!(
        "Average subscore QWK: {:.3}\nLabeled pairs: {}  Parse failures: {}  Unlabeled: {}\n\
         Total-score discrepancies: {} under, {} over\n",
        m.avg_subscore_qwk,
        m.labeled_pairs,
        m.parse_failures,
        m.unlabeled,
        m.discrepancies.under,
        m.discrepancies.over
    ));
    out
}

/// Long-format CSV of every confusion matrix: `criterion,human,predicted,count`.
pub fn confusion_csv(m: &RunMetrics) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["criterion", "human", "predicted", "count"])
        .expect("in-memory write");
    for c in m.criteria.iter().chain(std::iter::once(&m.total_score)) {
        for (i, row) in c.confusion.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                w.write_record([
                    c.criterion_id.clone(),
                    (c.min + i as i64).to_string(),
                    (c.min + j as i64).to_string(),
                    n.to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
