//! Plain-text output for terminal use.

use std::fmt::Write;

use cotscore_core::hitl::{CandidateRanking, IrrSession, TrendReport, KAPPA_GATE};
use cotscore_core::runner::{RunManifest, RunRecord};
use cotscore_core::workspace::{irr_status_label, ConfigSummary, IngestReport, Partition, StoredSplit};

/// Left-aligned first column, right-aligned rest, two spaces apart.
fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut all = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    all.extend(rows);
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| all.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, row) in all.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if k == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
            out.push('\n');
        }
    }
    out
}

pub fn ingest(r: &IngestReport) -> String {
    let mut out = String::new();
    for (assessment, n) in &r.added {
        writeln!(out, "added {n} responses to {assessment}").unwrap();
    }
    if !r.already_present.is_empty() {
        writeln!(out, "skipped {} already present", r.already_present.len()).unwrap();
    }
    for e in &r.errors {
        writeln!(out, "rejected {e}").unwrap();
    }
    out
}

pub fn split(s: &StoredSplit) -> String {
    format!(
        "{}: {} train, {} test, {} withheld from test\n  {}\n  {}\n",
        s.assessment_id,
        s.split.train.len(),
        s.split.test.len(),
        s.spec.withheld_from_test.len(),
        s.split_id(Partition::Train),
        s.split_id(Partition::Test),
    )
}

pub fn configs(configs: &[ConfigSummary]) -> String {
    table(
        &["Config", "Version", "Active", "Assessment", "Exemplars", "Hash"],
        configs
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    c.version.to_string(),
                    if c.active { "*".into() } else { String::new() },
                    c.assessment_id.clone(),
                    c.exemplar_ids.len().to_string(),
                    c.hash.as_deref().map(|h| h[..12].to_string()).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect(),
    )
}

pub fn run_summary(r: &RunRecord) -> String {
    let m = &r.manifest;
    format!(
        "run {}\n  config {} v{} ({})\n  provider {}\n  split {}\n  {} scored, {} errors, status {:?}\n",
        m.run_id,
        m.config_name,
        m.config_version,
        &m.config_hash[..12],
        m.provider_id,
        m.split_id,
        m.result_count,
        m.error_count,
        m.status
    )
}

pub fn runs(runs: &[RunManifest]) -> String {
    table(
        &["Run", "Config", "Provider", "Split", "Results", "Errors", "Status"],
        runs.iter()
            .map(|m| {
                vec![
                    m.run_id.clone(),
                    format!("{}@{}", m.config_name, m.config_version),
                    m.provider_id.clone(),
                    m.split_id.clone(),
                    m.result_count.to_string(),
                    m.error_count.to_string(),
                    format!("{:?}", m.status),
                ]
            })
            .collect(),
    )
}

pub fn irr_session(s: &IrrSession) -> String {
    let round = s.current();
    let mut out = format!(
        "{} ({}) raters {} and {}\n  status {}\n  round {}: {} sampled of {}\n",
        s.id,
        s.assessment_id,
        s.raters[0],
        s.raters[1],
        irr_status_label(s.status),
        round.round,
        round.sampled_ids.len(),
        s.population
    );
    for r in &s.raters {
        let done = round.scores.get(r).map_or(0, |m| m.len());
        writeln!(out, "  {r}: {done}/{} scored", round.sampled_ids.len()).unwrap();
    }
    if let Some(k) = &round.result {
        writeln!(
            out,
            "  kappa {:.3} (gate {KAPPA_GATE:.2}), qwk {:.3}, {} pairs",
            k.kappa, k.qwk, k.pairs
        )
        .unwrap();
    }
    let open = s.disagreements();
    if !open.is_empty() {
        writeln!(out, "  {} unresolved disagreements:", open.len()).unwrap();
        for (response, criterion) in open {
            writeln!(out, "    {response} {criterion}").unwrap();
        }
    }
    out
}

pub fn irr_sessions(sessions: &[IrrSession]) -> String {
    table(
        &["Session", "Assessment", "Status", "Rounds", "Last kappa"],
        sessions
            .iter()
            .map(|s| {
                vec![
                    s.id.clone(),
                    s.assessment_id.clone(),
                    irr_status_label(s.status).to_string(),
                    s.rounds.len().to_string(),
                    s.kappa_history.last().map_or("-".into(), |k| format!("{k:.3}")),
                ]
            })
            .collect(),
    )
}

pub fn trends(r: &TrendReport) -> String {
    let mut out = table(
        &["Criterion", "FP", "FN", "Trend"],
        r.criteria
            .iter()
            .chain(std::iter::once(&r.overall))
            .map(|c| {
                vec![
                    c.criterion_id.clone(),
                    c.fp.to_string(),
                    c.fn_count.to_string(),
                    format!("{:?}", c.label),
                ]
            })
            .collect(),
    );
    writeln!(out, "threshold {}", r.threshold).unwrap();
    out
}

pub fn ranking(r: &CandidateRanking) -> String {
    let mut out = table(
        &["Response", "Score", "Human", "Model", "Errors"],
        r.candidates
            .iter()
            .map(|c| {
                let errors: Vec<String> = c
                    .errors
                    .iter()
                    .map(|e| format!("{} {}->{}", e.criterion_id, e.human, e.predicted))
                    .collect();
                vec![
                    c.response_id.clone(),
                    format!("{:.2}", c.score),
                    c.human_total.to_string(),
                    c.llm_total.to_string(),
                    errors.join(", "),
                ]
            })
            .collect(),
    );
    writeln!(out, "overall trend {:?}", r.overall_trend).unwrap();
    out
}
