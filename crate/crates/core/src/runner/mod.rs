//! Scoring runs: prompt × split × provider, persisted under `runs/<run_id>/`.

mod record;

pub use record::{
    AuditFlag, Discrepancy, DiscrepancyKind, ResponseFailure, RunErrorEntry, RunManifest,
    RunRecord, RunStatus, ScoredResult,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::Utc;
use thiserror::Error;

use crate::corpus::{ResponseSet, StudentResponse};
use crate::gateway::{parse_output, CompletionRequest, LlmResult, Provider};
use crate::prompt::cot::{quoted_spans, stated_verdict};
use crate::prompt::{render_resolved, render_user_message, CharHeuristic, Prompt, PromptError, ResolvedConfig};
use crate::rubric::Rubric;
use crate::util::{sha256_hex, write_atomic};
use record::{to_jsonl, ERRORS, MANIFEST, RESULTS};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("split {0:?} is empty")]
    EmptySplit(String),
    #[error("run storage I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run directory {0} belongs to a different run")]
    Conflict(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Deterministic run id, so repeating a run resumes or returns the existing one.
pub fn run_id(config_hash: &str, split_id: &str, provider_id: &str) -> String {
    let key = format!("{config_hash}\n{split_id}\n{provider_id}");
    sha256_hex(key.as_bytes())[..16].to_string()
}

/// Compares the reported total with the sum of the model's own subscores.
pub fn detect_total_discrepancy(llm: &LlmResult, rubric: &Rubric) -> Option<Discrepancy> {
    let sum = subscore_sum(llm, rubric);
    let diff = llm.reported_total - sum;
    match diff.signum() {
        0 => None,
        1 => Some(Discrepancy {
            kind: DiscrepancyKind::Over,
            magnitude: diff,
        }),
        _ => Some(Discrepancy {
            kind: DiscrepancyKind::Under,
            magnitude: -diff,
        }),
    }
}

fn subscore_sum(llm: &LlmResult, rubric: &Rubric) -> i64 {
    llm.criteria
        .iter()
        .map(|c| c.score * rubric.criterion(&c.id).map(|k| k.points as i64).unwrap_or(1))
        .sum()
}

/// Citation and verdict checks on a parsed output.
pub fn audit_output(llm: &LlmResult, response: &StudentResponse) -> Vec<AuditFlag> {
    let mut flags = Vec::new();
    for c in &llm.criteria {
        for quote in quoted_spans(&c.reasoning) {
            if !response.contains_verbatim(quote) {
                flags.push(AuditFlag::UngroundedCitation {
                    slot: c.id.clone(),
                    quote: quote.to_string(),
                });
            }
        }
        if let Some(stated) = stated_verdict(&c.reasoning) {
            if stated != c.score {
                flags.push(AuditFlag::VerdictMismatch {
                    slot: c.id.clone(),
                    stated,
                    score: c.score,
                });
            }
        }
    }
    flags
}

enum Outcome {
    Scored(Box<ScoredResult>),
    Failed(RunErrorEntry),
}

fn score_one(
    run_id: &str,
    prompt: &Prompt,
    rubric: &Rubric,
    provider: &dyn Provider,
    response: &StudentResponse,
) -> Outcome {
    let request = CompletionRequest {
        run_id: run_id.to_string(),
        response_id: response.id.clone(),
        system: prompt.text.clone(),
        user: render_user_message(response),
    };
    let raw = match provider.complete(&request) {
        Ok(raw) => raw,
        Err(e) => {
            return Outcome::Failed(RunErrorEntry {
                response_id: response.id.clone(),
                failure: ResponseFailure::Gateway(e),
                raw_text: None,
            })
        }
    };
    let llm = match parse_output(&raw, rubric) {
        Ok(llm) => llm,
        Err(e) => {
            return Outcome::Failed(RunErrorEntry {
                response_id: response.id.clone(),
                failure: ResponseFailure::Parse(e),
                raw_text: Some(raw.text),
            })
        }
    };
    let human = response.human_vector(rubric).ok().flatten();
    let matches = human.as_ref().map(|h| {
        llm.criteria
            .iter()
            .map(|c| (c.id.clone(), h.values.get(&c.id) == Some(&c.score)))
            .collect::<BTreeMap<_, _>>()
    });
    Outcome::Scored(Box::new(ScoredResult {
        response_id: response.id.clone(),
        subscore_sum: subscore_sum(&llm, rubric),
        discrepancy: detect_total_discrepancy(&llm, rubric),
        audit: audit_output(&llm, response),
        human,
        matches,
        llm,
    }))
}

/// What to score and where to keep the record.
pub struct RunPlan<'a> {
    pub resolved: &'a ResolvedConfig,
    pub split_id: String,
    pub response_ids: Vec<String>,
    pub responses: &'a ResponseSet,
    pub parallelism: usize,
    pub runs_dir: &'a Path,
}

/// Scores every split member, resuming a partial run with the same id and
/// returning a complete one unchanged.
///
/// Each finished response is appended to the JSONL files as soon as it is
/// known; the manifest is only marked complete after the sorted final files
/// are in place.
pub fn execute_run(plan: &RunPlan<'_>, provider: &dyn Provider) -> Result<RunRecord, RunnerError> {
    let prompt = render_resolved(plan.resolved, &CharHeuristic)?;
    let mut ids: Vec<String> = plan.response_ids.clone();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(RunnerError::EmptySplit(plan.split_id.clone()));
    }
    let rubric = &plan.resolved.rubric;
    let run_id = run_id(&prompt.config_hash, &plan.split_id, &provider.id());
    let dir = plan.runs_dir.join(&run_id);
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;

    let existing = if dir.join(MANIFEST).exists() {
        let rec = RunRecord::load(&dir).map_err(io(&dir))?;
        if rec.manifest.config_hash != prompt.config_hash || rec.manifest.response_ids != ids {
            return Err(RunnerError::Conflict(dir));
        }
        if rec.is_complete() {
            return Ok(rec);
        }
        Some(rec)
    } else {
        None
    };

    let config = &plan.resolved.config;
    let mut manifest = match &existing {
        Some(rec) => rec.manifest.clone(),
        None => RunManifest {
            run_id: run_id.clone(),
            config_hash: prompt.config_hash.clone(),
            config_name: config.name.clone(),
            config_version: config.version,
            assessment_id: config.assessment_id.clone(),
            rubric_id: config.rubric_id.clone(),
            provider_id: provider.id(),
            split_id: plan.split_id.clone(),
            response_ids: ids.clone(),
            parallelism: plan.parallelism.max(1),
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Running,
            result_count: 0,
            error_count: 0,
        },
    };
    let manifest_path = dir.join(MANIFEST);
    write_json(&manifest_path, &manifest)?;

    let (mut results, mut errors) = existing
        .map(|r| (r.results, r.errors))
        .unwrap_or_default();
    let done: BTreeSet<String> = results
        .iter()
        .map(|r| r.response_id.clone())
        .chain(errors.iter().map(|e| e.response_id.clone()))
        .collect();
    let todo: Vec<&String> = ids.iter().filter(|id| !done.contains(*id)).collect();
    tracing::info!(run_id = %run_id, pending = todo.len(), total = ids.len(), "executing run");

    let results_path = dir.join(RESULTS);
    let errors_path = dir.join(ERRORS);
    let mut results_file = append(&results_path)?;
    let mut errors_file = append(&errors_path)?;

    let workers = plan.parallelism.max(1).min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Outcome>();
    std::thread::scope(|scope| -> Result<(), RunnerError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, todo, prompt, run_id) = (&next, &todo, &prompt, &run_id);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(id) = todo.get(i) else { break };
                let outcome = match plan.responses.get(id) {
                    Some(resp) => score_one(run_id, prompt, rubric, provider, resp),
                    None => Outcome::Failed(RunErrorEntry {
                        response_id: id.to_string(),
                        failure: ResponseFailure::MissingResponse(id.to_string()),
                        raw_text: None,
                    }),
                };
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Outcome::Scored(r) => {
                    append_line(&mut results_file, &results_path, &*r)?;
                    results.push(*r);
                }
                Outcome::Failed(e) => {
                    append_line(&mut errors_file, &errors_path, &e)?;
                    errors.push(e);
                }
            }
        }
        Ok(())
    })?;

    results.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    results.dedup_by(|a, b| a.response_id == b.response_id);
    errors.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    errors.dedup_by(|a, b| a.response_id == b.response_id);
    write_atomic(&results_path, to_jsonl(&results).as_bytes()).map_err(io(&results_path))?;
    write_atomic(&errors_path, to_jsonl(&errors).as_bytes()).map_err(io(&errors_path))?;

    manifest.status = RunStatus::Complete;
    manifest.finished_at = Some(Utc::now());
    manifest.result_count = results.len();
    manifest.error_count = errors.len();
    write_json(&manifest_path, &manifest)?;
    Ok(RunRecord {
        manifest,
        results,
        errors,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let text = serde_json::to_string_pretty(value).expect("record serializes") + "\n";
    write_atomic(path, text.as_bytes()).map_err(io(path))
}

fn append(path: &Path) -> Result<std::fs::File, RunnerError> {
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))
}

fn append_line<T: serde::Serialize>(file: &mut std::fs::File, path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.flush())
        .map_err(io(path))
}
