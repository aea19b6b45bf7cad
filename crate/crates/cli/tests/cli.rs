use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use cotscore_core::hitl::IrrSession;
use cotscore_core::metrics::RunMetrics;
use cotscore_core::runner::{RunManifest, RunRecord};
use cotscore_core::workspace::Workspace;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_cotscore");

fn cotscore(data: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = cotscore(data, args);
    assert!(
        out.status.success(),
        "cotscore {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_of<T: serde::de::DeserializeOwned>(data: &Path, args: &[&str]) -> T {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    serde_json::from_str(&ok(data, &all)).unwrap()
}

fn fail(data: &Path, args: &[&str]) -> String {
    let out = cotscore(data, args);
    assert_eq!(out.status.code(), Some(1), "cotscore {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&data, &["init", "--fixtures"]);
    (dir, data)
}

fn timeless(mut r: RunRecord) -> RunRecord {
    r.manifest.started_at = chrono::DateTime::UNIX_EPOCH;
    r.manifest.finished_at = None;
    r
}

struct Served {
    child: Child,
    base: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(data: &Path) -> Served {
    let mut child = Command::new(BIN)
        .arg("--data")
        .arg(data)
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    Served { child, base }
}

#[test]
fn score_then_report() {
    let (_dir, data) = workspace();
    let text = ok(
        &data,
        &["score", "--assessment", "rules", "--split", "validation", "--provider", "faulty-rules", "--config", "rules-cot"],
    );
    assert!(text.contains("122 scored, 0 errors"), "{text}");
    let runs: Vec<RunManifest> = json_of(&data, &["runs"]);
    assert_eq!(runs.len(), 1);
    let run_id = runs[0].run_id.clone();

    let ws = Workspace::open(&data).unwrap();
    let out = data.parent().unwrap().join("metrics.json");
    let csv = data.parent().unwrap().join("confusion.csv");
    let table = ok(
        &data,
        &["metrics", "--run", &run_id, "--out", out.to_str().unwrap(), "--confusion-csv", csv.to_str().unwrap()],
    );
    assert!(table.starts_with("Criterion"));
    assert!(table.contains("Total Score"));
    let expected = ws.metrics(&run_id).unwrap();
    let written: RunMetrics = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, expected);
    let printed: RunMetrics = json_of(&data, &["metrics", "--run", &run_id]);
    assert_eq!(printed, expected);

    // 9 binary criteria (4 cells each) plus the 0..=9 total (100 cells).
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 9 * 4 + 100);

    let trends = ok(&data, &["al", "trends", "--run", &run_id]);
    let r2 = trends.lines().find(|l| l.starts_with("R2 ")).unwrap();
    assert!(r2.ends_with("Overscoring"), "{r2}");
}

#[test]
fn served_run_equals_cli_run_and_is_visible_to_the_cli() {
    let (_a, cli_data) = workspace();
    let (_b, served_data) = workspace();
    let args = ["score", "--split", "test", "--provider", "echo", "--config", "debugging-cot"];
    let manifest: RunManifest = json_of(&cli_data, &args);
    let by_cli = Workspace::open(&cli_data).unwrap().load_run(&manifest.run_id).unwrap();

    let server = serve(&served_data);
    let client = reqwest::blocking::Client::new();
    let response = client
        .post(format!("{}/runs", server.base))
        .json(&json!({"config": "debugging-cot", "provider": "echo", "split": "test"}))
        .send()
        .unwrap();
    assert_eq!(response.status(), reqwest::StatusCode::ACCEPTED);
    let job: Value = response.json().unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    let run_id = loop {
        let j: Value = client
            .get(format!("{}/jobs/{}", server.base, job["id"].as_str().unwrap()))
            .send()
            .unwrap()
            .json()
            .unwrap();
        match j["status"].as_str().unwrap() {
            "succeeded" => break j["run_id"].as_str().unwrap().to_string(),
            "failed" => panic!("job failed: {j}"),
            _ => {}
        }
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(20));
    };
    let by_service: RunRecord = client
        .get(format!("{}/runs/{run_id}", server.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(timeless(by_service.clone()), timeless(by_cli));

    let listed: Vec<RunManifest> = json_of(&served_data, &["runs"]);
    assert_eq!(listed, vec![by_service.manifest]);
}

#[test]
fn serve_refuses_missing_dir_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(&dir.path().join("absent"), &["serve", "--port", "0"]);
    assert!(err.contains("not an initialized data directory"), "{err}");

    let (_d, data) = workspace();
    let first = serve(&data);
    let port = first.base.rsplit(':').next().unwrap().to_string();
    let err = fail(&data, &["serve", "--port", &port]);
    assert!(err.contains("already in use"), "{err}");
}

#[test]
fn active_learning_round_from_the_command_line() {
    let (dir, data) = workspace();
    let manifest: RunManifest = json_of(
        &data,
        &["score", "--split", "validation", "--provider", "faulty-rules", "--config", "rules-cot"],
    );
    let ranking: Value = json_of(&data, &["al", "rank", "--run", &manifest.run_id, "--limit", "2"]);
    let candidates = ranking["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 2);
    let top = candidates[0]["response_id"].as_str().unwrap();

    let cot = dir.path().join("chains.toml");
    let mut body = String::new();
    for e in candidates[0]["errors"].as_array().unwrap() {
        body.push_str(&format!(
            "[[chains]]\nslot = {}\ntext = \"The student does not state this step.\"\n\n",
            e["criterion_id"]
        ));
    }
    std::fs::write(&cot, body).unwrap();
    let text = ok(
        &data,
        &["al", "promote", "--run", &manifest.run_id, "--response", top, "--cot", cot.to_str().unwrap()],
    );
    assert!(text.contains(&format!("promoted al-{top} into rules-cot v1 -> v2")), "{text}");
    let prompt = ok(&data, &["prompt", "--config", "rules-cot"]);
    assert!(prompt.contains("(active learning)"));

    let second = candidates[1]["response_id"].as_str().unwrap();
    let err = fail(
        &data,
        &["al", "promote", "--run", &manifest.run_id, "--response", second, "--cot", cot.to_str().unwrap()],
    );
    assert!(err.starts_with("error[IterationQuotaExceeded]"), "{err}");
}

#[test]
fn irr_session_from_the_command_line() {
    let (dir, data) = workspace();
    let session: IrrSession = json_of(&data, &["irr", "open", "--assessment", "rules", "--raters", "ana,ben"]);
    let sampled = session.current().sampled_ids.clone();
    assert_eq!(sampled.len(), 32);

    let slots: Vec<String> = (1..=9).map(|i| format!("R{i}")).collect();
    let labels = |flip: Option<&str>| -> Value {
        let mut m = serde_json::Map::new();
        for id in &sampled {
            let row: serde_json::Map<String, Value> = slots
                .iter()
                .map(|s| (s.clone(), json!(i64::from(Some(id.as_str()) == flip && s == "R1"))))
                .collect();
            m.insert(id.clone(), Value::Object(row));
        }
        Value::Object(m)
    };
    let ana = dir.path().join("ana.json");
    let ben = dir.path().join("ben.json");
    std::fs::write(&ana, labels(None).to_string()).unwrap();
    std::fs::write(&ben, labels(Some(&sampled[0])).to_string()).unwrap();

    ok(&data, &["irr", "score", &session.id, "--rater", "ana", "--scores", ana.to_str().unwrap()]);
    let status = ok(&data, &["irr", "status", &session.id]);
    assert!(status.contains("ana: 32/32 scored") && status.contains("ben: 0/32 scored"), "{status}");
    let scored: IrrSession =
        json_of(&data, &["irr", "score", &session.id, "--rater", "ben", "--scores", ben.to_str().unwrap()]);
    assert_eq!(scored.kappa_history, vec![0.0]);
    let status = ok(&data, &["irr", "status", &session.id]);
    assert!(status.contains("needs_resample") && status.contains(&format!("{} R1", sampled[0])), "{status}");

    let guideline = "Count a restated absorption limit as stating the condition.";
    let text = ok(
        &data,
        &[
            "irr", "resolve", &session.id, "--response", &sampled[0], "--criterion", "R1", "--consensus", "1",
            "--note", "restatement counts", "--sticking-point", "Restated limits", "--guideline", guideline,
        ],
    );
    assert!(text.contains("recorded sticking point"), "{text}");
    assert!(ok(&data, &["prompt", "--config", "rules-cot"]).contains(guideline));
    let err = fail(
        &data,
        &["irr", "resolve", &session.id, "--response", &sampled[0], "--criterion", "R1", "--consensus", "1"],
    );
    assert!(err.starts_with("error[NoSuchDisagreement]"), "{err}");

    let resampled: IrrSession = json_of(&data, &["irr", "resample", &session.id]);
    assert_eq!(resampled.rounds.len(), 2);
    let listing = ok(&data, &["irr", "status"]);
    assert!(listing.contains(&session.id));
}

#[test]
fn ingest_and_split_from_files() {
    let (dir, data) = workspace();
    let file = dir.path().join("more.jsonl");
    let row = json!({
        "id": "rules-new-1",
        "assessment_id": "rules",
        "parts": {"Response": "If rainfall exceeds the limit, runoff is the difference."},
    });
    std::fs::write(&file, format!("{row}\n")).unwrap();
    let text = ok(&data, &["ingest", file.to_str().unwrap()]);
    assert_eq!(text.trim(), "added 1 responses to rules");
    let again = ok(&data, &["ingest", file.to_str().unwrap()]);
    assert!(again.contains("skipped 1 already present"), "{again}");

    let unknown = dir.path().join("more.txt");
    std::fs::write(&unknown, "").unwrap();
    assert!(fail(&data, &["ingest", unknown.to_str().unwrap()]).contains("--format"));

    let split = ok(&data, &["split", "--assessment", "rules", "--test-fraction", "0.25", "--seed", "3"]);
    assert!(split.starts_with("rules: 119 train, 40 test"), "{split}");
    let err = fail(&data, &["split", "--assessment", "rules", "--test-fraction", "1.5"]);
    assert!(err.starts_with("error[FractionOutOfRange]"), "{err}");
}

#[test]
fn errors_carry_codes_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(&dir.path().join("nope"), &["runs"]);
    assert!(err.starts_with("error[DataDirMissing]"), "{err}");

    let (_d, data) = workspace();
    assert!(fail(&data, &["metrics", "--run", "0000000000000000"]).starts_with("error[NotFound]"));
    assert!(fail(&data, &["init"]).starts_with("error[AlreadyInitialized]"));
    let bad_split = cotscore(&data, &["score", "--split", "dev", "--provider", "echo", "--config", "rules-cot"]);
    assert_eq!(bad_split.status.code(), Some(2));
}
