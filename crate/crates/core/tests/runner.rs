mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use cotscore_core::gateway::{
    CompletionRequest, EchoLabels, GatewayError, ParseError, Provider, RawCompletion,
};
use cotscore_core::metrics::run_metrics;
use cotscore_core::runner::{
    execute_run, run_id, DiscrepancyKind, ResponseFailure, RunPlan, RunRecord, RunStatus,
};
use cotscore_core::workspace::{Partition, RunRequest, Workspace, WorkspaceError};

fn request(config: &str, provider: &str, split: Partition) -> RunRequest {
    RunRequest {
        config: config.into(),
        provider: provider.into(),
        split,
        assessment: None,
        parallelism: None,
    }
}

/// Installs a scripted provider whose completions come from `script`.
fn install_scripted(ws: &Workspace, id: &str, script: &BTreeMap<String, String>) {
    let dir = ws.root().join("providers");
    std::fs::write(dir.join(format!("{id}.json")), serde_json::to_string(script).unwrap()).unwrap();
    std::fs::write(
        dir.join(format!("{id}.toml")),
        format!("id = \"scripted:{id}\"\nkind = \"scripted\"\nfixtures = \"{id}.json\"\n"),
    )
    .unwrap();
}

/// Human-label documents for the rules test split; `total` maps each id's
/// subscore sum to the total the script reports.
fn rules_script(ws: &Workspace, mut total: impl FnMut(usize, i64) -> i64) -> (Vec<String>, BTreeMap<String, String>) {
    let resolved = ws.resolve("rules-cot").unwrap();
    let (_, ids) = ws.partition_ids(&resolved, Partition::Test).unwrap();
    let responses = ws.responses("rules").unwrap();
    let rubric = ws.rubric("rules").unwrap();
    let mut script = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let scores = responses.get(id).unwrap().human_scores.clone().unwrap();
        let sum: i64 = scores.values().sum();
        script.insert(id.clone(), common::document(&rubric, &scores, total(i, sum)));
    }
    (ids, script)
}

#[test]
fn echo_run_agrees_perfectly() {
    let (_dir, ws) = common::fixture_workspace();
    let run = ws.run(&request("rules-cot", "echo", Partition::Test)).unwrap();
    assert_eq!(run.manifest.status, RunStatus::Complete);
    assert_eq!(run.results.len(), 32);
    assert!(run.errors.is_empty());
    assert!(run.results.iter().all(|r| r.fully_correct() == Some(true)));
    assert!(run.results.iter().all(|r| r.discrepancy.is_none()));

    let prompt = ws.render("rules-cot").unwrap();
    let split = ws.stored_split("rules").unwrap().unwrap();
    let expected = run_id(&prompt.config_hash, &split.split_id(Partition::Test), "echo-labels:rules");
    assert_eq!(run.manifest.run_id, expected);
    assert_eq!(run.manifest.provider_id, "echo-labels:rules");

    let m = ws.metrics(&run.manifest.run_id).unwrap();
    assert_eq!(m.labeled_pairs, 32);
    assert!(m.criteria.iter().all(|c| c.accuracy == 1.0 && c.qwk == 1.0));
    assert_eq!(m.avg_subscore_qwk, 1.0);
}

#[test]
fn rerunning_returns_the_stored_record() {
    let (_dir, ws) = common::fixture_workspace();
    let first = ws.run(&request("engineering-cot", "echo", Partition::Test)).unwrap();
    let second = ws.run(&request("engineering-cot", "echo", Partition::Test)).unwrap();
    assert_eq!(first, second);
    assert_eq!(ws.load_run(&first.manifest.run_id).unwrap(), first);
    assert_eq!(ws.run_ids().unwrap(), vec![first.manifest.run_id.clone()]);
    let train = ws.run(&request("engineering-cot", "echo", Partition::Train)).unwrap();
    assert_ne!(train.manifest.run_id, first.manifest.run_id);
    assert_eq!(train.results.len() + first.results.len(), 161);
}

struct Counting {
    inner: EchoLabels,
    calls: Arc<AtomicUsize>,
}

impl Provider for Counting {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[test]
fn interrupted_run_resumes_where_it_stopped() {
    let (dir, ws) = common::fixture_workspace();
    let resolved = ws.resolve("debugging-cot").unwrap();
    let (split_id, ids) = ws.partition_ids(&resolved, Partition::Test).unwrap();
    let responses = ws.responses("debugging").unwrap();
    let runs_dir = dir.path().join("runs");
    let plan = RunPlan {
        resolved: &resolved,
        split_id,
        response_ids: ids.clone(),
        responses: &responses,
        parallelism: 3,
        runs_dir: &runs_dir,
    };
    let calls = Arc::new(AtomicUsize::new(0));
    let provider = Counting { inner: EchoLabels::new(&resolved.rubric, responses.iter()), calls: calls.clone() };
    let full = execute_run(&plan, &provider).unwrap();
    assert_eq!(calls.swap(0, Ordering::SeqCst), ids.len());

    // Simulate a crash after ten responses, with a torn trailing line.
    let run_dir = runs_dir.join(&full.manifest.run_id);
    let results = std::fs::read_to_string(run_dir.join("results.jsonl")).unwrap();
    let mut kept: String = results.lines().take(10).map(|l| format!("{l}\n")).collect();
    kept.push_str("{\"response_id\": \"debug");
    std::fs::write(run_dir.join("results.jsonl"), kept).unwrap();
    let mut manifest = full.manifest.clone();
    manifest.status = RunStatus::Running;
    manifest.finished_at = None;
    std::fs::write(run_dir.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();

    let resumed = execute_run(&plan, &provider).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), ids.len() - 10);
    assert_eq!(resumed.results, full.results);
    assert_eq!(resumed.manifest.started_at, full.manifest.started_at);
    assert!(resumed.is_complete());
    assert_eq!(RunRecord::load(&run_dir).unwrap(), resumed);

    execute_run(&plan, &provider).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), ids.len() - 10);
}

#[test]
fn parallelism_does_not_change_results() {
    let (_d1, a) = common::fixture_workspace();
    let (_d2, b) = common::fixture_workspace();
    let one = a.run(&RunRequest { parallelism: Some(1), ..request("debugging-cot", "faulty-debugging", Partition::Test) }).unwrap();
    let many = b.run(&RunRequest { parallelism: Some(8), ..request("debugging-cot", "faulty-debugging", Partition::Test) }).unwrap();
    assert_eq!(one.results, many.results);
    assert_eq!(one.manifest.run_id, many.manifest.run_id);
}

#[test]
fn malformed_output_is_recorded_not_fatal() {
    let (_dir, ws) = common::fixture_workspace();
    let (ids, mut script) = rules_script(&ws, |_, sum| sum);
    assert_eq!(ids.len(), 32);
    let bad = ids[5].clone();
    script.insert(bad.clone(), "The response looks mostly right to me.".into());
    install_scripted(&ws, "one-bad", &script);

    let run = ws.run(&request("rules-cot", "one-bad", Partition::Test)).unwrap();
    assert!(run.is_complete());
    assert_eq!(run.results.len(), 31);
    assert_eq!(run.errors.len(), 1);
    let err = &run.errors[0];
    assert_eq!(err.response_id, bad);
    assert!(matches!(err.failure, ResponseFailure::Parse(ParseError::MalformedDocument(_))));
    assert_eq!(err.raw_text.as_deref(), Some("The response looks mostly right to me."));

    let m = ws.metrics(&run.manifest.run_id).unwrap();
    assert_eq!(m.parse_failures, 1);
    assert_eq!(m.labeled_pairs, 31);
}

#[test]
fn total_discrepancies_are_counted() {
    let (_dir, ws) = common::fixture_workspace();
    let mut lowered = 0;
    let (_, script) = rules_script(&ws, |_, sum| {
        if sum >= 1 && lowered < 7 {
            lowered += 1;
            sum - 1
        } else {
            sum
        }
    });
    install_scripted(&ws, "undercount", &script);
    let run = ws.run(&request("rules-cot", "undercount", Partition::Test)).unwrap();
    assert_eq!(run.results.len(), 32);
    let flagged: Vec<_> = run.results.iter().filter_map(|r| r.discrepancy).collect();
    assert_eq!(flagged.len(), 7);
    assert!(flagged.iter().all(|d| d.kind == DiscrepancyKind::Under && d.magnitude == 1));

    let m = run_metrics(&run, &ws.rubric("rules").unwrap()).unwrap();
    assert_eq!(m.discrepancies.under, 7);
    assert_eq!(m.discrepancies.over, 0);
    assert_eq!(m.discrepancies.by_difference, BTreeMap::from([(-1, 7)]));
    // Subscores still agree with humans, so every subscore QWK stays at 1.
    assert!(m.criteria.iter().all(|c| c.qwk == 1.0));
}

#[test]
fn prompt_errors_abort_before_scoring() {
    let (_dir, ws) = common::fixture_workspace();
    let mut cfg = ws.active_config("rules-cot").unwrap();
    cfg.version += 1;
    cfg.token_budget = 500;
    ws.save_config(&cfg, true).unwrap();
    let err = ws.run(&request("rules-cot", "echo", Partition::Test)).unwrap_err();
    assert_eq!(err.code(), "TokenBudgetExceeded");
    assert!(ws.run_ids().unwrap().is_empty());

    let err = ws.run(&request("rules-cot@1", "nope", Partition::Test)).unwrap_err();
    assert!(matches!(err, WorkspaceError::NotFound { kind: "provider", .. }));
    let err = ws
        .run(&RunRequest { assessment: Some("engineering".into()), ..request("rules-cot@1", "echo", Partition::Test) })
        .unwrap_err();
    assert!(matches!(err, WorkspaceError::Invalid(_)));
}
