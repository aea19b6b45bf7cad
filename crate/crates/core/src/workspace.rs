//! On-disk data directory tying the modules together.
//!
//! ```text
//! workspace.toml                     marker
//! rubrics/<id>.toml
//! rubrics/<id>.sticking_points/<sp>.json
//! assessments/<id>.toml
//! responses/<assessment>.jsonl
//! exemplars/                         versioned exemplar store
//! configs/<name>/v<N>.toml           prompt config history
//! configs/<name>/active              active version number
//! configs/snapshots/<hash>.json      resolved configs by prompt hash
//! splits/<assessment>.json
//! providers/<id>.toml
//! runs/<run_id>/
//! irr/<session>.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    ingest_str, split_dataset, Exemplar, ExemplarSource, ExemplarStore, InputFormat, ResponseSet,
    RowError, Split, SplitError, SplitSpec, StoreError, StudentResponse,
};
use crate::gateway::{
    ChatTransport, EchoLabels, Faulty, GatewayError, Provider, ProviderConfig, ProviderKind,
    RetryingProvider, Scripted,
};
use crate::hitl::{
    build_promotion, detect_trends, effective_rubric, rank_candidates, CandidateRanking,
    CandidateWeights, IrrError, IrrSession, IrrStatus, PromotionError, PromotionRequest,
    Resolution, StickingPoint, StickingPointDraft, StickingPointError, StickingSource,
    TrendReport, DEFAULT_TREND_THRESHOLD,
};
use crate::metrics::{run_metrics, MetricsError, RunMetrics};
use crate::prompt::{
    render_resolved, resolve_config, CharHeuristic, Prompt, PromptConfig, PromptError,
    PromptSources, ResolvedConfig,
};
use crate::rubric::{parse_rubric, Assessment, AssessmentError, Rubric, RubricError, ScoreVector};
use crate::runner::{execute_run, RunManifest, RunPlan, RunRecord, RunnerError, DEFAULT_PARALLELISM};
use crate::util::write_atomic;

pub const MARKER: &str = "workspace.toml";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{0} is not an initialized data directory (no {MARKER})")]
    DataDirMissing(PathBuf),
    #[error("{0} is already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Irr(#[from] IrrError),
    #[error(transparent)]
    Promotion(#[from] PromotionError),
    #[error(transparent)]
    StickingPoint(#[from] StickingPointError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Leading identifier of a `Debug` rendering, i.e. the variant name.
fn variant_name(debug: String) -> String {
    debug
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .next()
        .unwrap_or_default()
        .to_string()
}

impl WorkspaceError {
    /// Stable machine-readable error code: the innermost variant name.
    pub fn code(&self) -> String {
        use WorkspaceError as W;
        match self {
            W::Rubric(e) => variant_name(format!("{e:?}")),
            W::Assessment(e) => variant_name(format!("{e:?}")),
            W::Prompt(PromptError::Rubric(e)) => variant_name(format!("{e:?}")),
            W::Prompt(e) => variant_name(format!("{e:?}")),
            W::Split(e) => variant_name(format!("{e:?}")),
            W::Store(StoreError::Unknown(_)) => "UnknownExemplar".into(),
            W::Store(e) => variant_name(format!("{e:?}")),
            W::Runner(RunnerError::Prompt(e)) => variant_name(format!("{e:?}")),
            W::Runner(e) => variant_name(format!("{e:?}")),
            W::Metrics(e) => variant_name(format!("{e:?}")),
            W::Irr(e) => variant_name(format!("{e:?}")),
            W::Promotion(e) => variant_name(format!("{e:?}")),
            W::StickingPoint(e) => variant_name(format!("{e:?}")),
            W::Gateway(e) => variant_name(format!("{e:?}")),
            other => variant_name(format!("{other:?}")),
        }
    }

    /// Structured detail for API clients.
    pub fn detail(&self) -> serde_json::Value {
        use serde_json::json;
        let tagged = |v: serde_json::Value| v.get("detail").cloned().unwrap_or(serde_json::Value::Null);
        match self {
            WorkspaceError::NotFound { kind, id } => json!({"kind": kind, "id": id}),
            WorkspaceError::Irr(e) => tagged(serde_json::to_value(e).unwrap_or_default()),
            WorkspaceError::Promotion(e) => tagged(serde_json::to_value(e).unwrap_or_default()),
            WorkspaceError::StickingPoint(e) => tagged(serde_json::to_value(e).unwrap_or_default()),
            WorkspaceError::Prompt(PromptError::TokenBudgetExceeded {
                estimated,
                reserve,
                budget,
                overshoot,
                largest,
            }) => json!({
                "estimated": estimated,
                "reserve": reserve,
                "budget": budget,
                "overshoot": overshoot,
                "largest": largest,
            }),
            WorkspaceError::Prompt(PromptError::Unbalanced(v)) => {
                json!({"violations": v.iter().map(|v| v.to_string()).collect::<Vec<_>>()})
            }
            _ => serde_json::Value::Null,
        }
    }
}

type Result<T, E = WorkspaceError> = std::result::Result<T, E>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| WorkspaceError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("document serializes") + "\n";
    write_text(path, &text)
}

/// File stems in `dir` with the given extension, sorted. Missing dir is empty.
fn stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(WorkspaceError::Invalid(format!("{kind} id {id:?} must be a plain name")))
    }
}

/// Which part of a split a run scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    /// Train minus the responses the config uses as exemplars.
    Validation,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown split {other:?}; use train, validation or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StoredSplit {
    pub assessment_id: String,
    pub spec: SplitSpec,
    pub split: Split,
}

impl StoredSplit {
    pub fn split_id(&self, partition: Partition) -> String {
        format!("{}/{}/{}", self.assessment_id, partition.as_str(), self.spec.fingerprint())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IngestReport {
    /// Responses added per assessment.
    pub added: BTreeMap<String, usize>,
    pub errors: Vec<RowError>,
    /// Ids skipped because the workspace already holds a response with that id.
    pub already_present: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ConfigSummary {
    pub name: String,
    pub version: u32,
    pub active: bool,
    pub assessment_id: String,
    pub rubric_id: String,
    pub exemplar_ids: Vec<String>,
    /// Prompt hash, if the config currently resolves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
}

/// Parameters for one scoring run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RunRequest {
    /// Config name (active version), `name@N`, a prompt hash, or a file path.
    pub config: String,
    pub provider: String,
    pub split: Partition,
    /// Must match the config's assessment when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OpenIrrRequest {
    pub assessment_id: String,
    pub raters: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct IrrScoresRequest {
    pub rater: String,
    /// response id → slot → label. Ordinal rubrics use the slot `score`.
    pub scores: BTreeMap<String, BTreeMap<String, i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ResolutionRequest {
    pub response_id: String,
    pub criterion_id: String,
    pub consensus: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Records the disagreement as a sticking point of the rubric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticking_point: Option<StickingPointDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ResolutionOutcome {
    pub session: IrrSession,
    pub resolution: Resolution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticking_point: Option<StickingPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PromotionOutcome {
    pub exemplar_id: String,
    pub config_name: String,
    pub previous_version: u32,
    pub version: u32,
    pub config_hash: String,
    pub exemplar_count: usize,
    pub estimated_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Marker {
    format: u32,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

enum ConfigRef {
    File(PathBuf),
    Version(String, u32),
    Active(String),
    Hash(String),
}

fn parse_config_ref(s: &str) -> ConfigRef {
    let s = s.trim();
    if s.len() == 64 && s.chars().all(|c| c.is_ascii_hexdigit()) {
        return ConfigRef::Hash(s.to_ascii_lowercase());
    }
    if s.ends_with(".toml") || s.contains('/') || s.contains(std::path::MAIN_SEPARATOR) {
        return ConfigRef::File(PathBuf::from(s));
    }
    if let Some((name, v)) = s.rsplit_once('@') {
        if let Ok(v) = v.trim_start_matches('v').parse() {
            return ConfigRef::Version(name.to_string(), v);
        }
    }
    ConfigRef::Active(s.to_string())
}

impl Workspace {
    /// Creates an empty workspace, optionally populated with the shipped
    /// fixtures and a default 80/20 split of each fixture response set.
    pub fn init(root: &Path, with_fixtures: bool) -> Result<Workspace> {
        if root.join(MARKER).exists() {
            return Err(WorkspaceError::AlreadyInitialized(root.to_path_buf()));
        }
        for sub in [
            "rubrics",
            "assessments",
            "responses",
            "exemplars",
            "configs",
            "splits",
            "providers",
            "runs",
            "irr",
        ] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        write_text(&root.join(MARKER), "format = 1\n")?;
        let ws = Workspace {
            root: root.to_path_buf(),
        };
        if with_fixtures {
            ws.install_fixtures()?;
        }
        Ok(ws)
    }

    pub fn open(root: &Path) -> Result<Workspace> {
        let marker = root.join(MARKER);
        if !marker.is_file() {
            return Err(WorkspaceError::DataDirMissing(root.to_path_buf()));
        }
        let text = read_text(&marker)?;
        toml::from_str::<Marker>(&text).map_err(|e| WorkspaceError::Corrupt {
            path: marker.clone(),
            message: e.to_string(),
        })?;
        Ok(Workspace {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn install_fixtures(&self) -> Result<()> {
        use crate::fixtures;
        for (name, text) in fixtures::dir("rubrics") {
            write_text(&self.root.join("rubrics").join(name), text)?;
        }
        for (name, text) in fixtures::dir("assessments") {
            write_text(&self.root.join("assessments").join(name), text)?;
        }
        for (name, text) in fixtures::dir("responses") {
            write_text(&self.root.join("responses").join(name), text)?;
        }
        for (name, text) in fixtures::dir("providers") {
            write_text(&self.root.join("providers").join(name), text)?;
        }
        for task in fixtures::TASKS {
            for (name, text) in fixtures::dir(&format!("sticking_points/{task}")) {
                write_text(&self.sticking_dir(task).join(name), text)?;
            }
        }
        let mut store = self.store()?;
        for (name, text) in fixtures::dir("exemplars") {
            let e: Exemplar = serde_json::from_str(text).map_err(|e| WorkspaceError::Corrupt {
                path: PathBuf::from(name),
                message: e.to_string(),
            })?;
            store.add(&e)?;
        }
        for (_, text) in fixtures::dir("configs") {
            let config = PromptConfig::parse(text)?;
            self.save_config(&config, true)?;
        }
        for task in fixtures::TASKS {
            self.split(task, 0.2, 0)?;
        }
        Ok(())
    }

    // ----------------------------------------------------------- rubrics

    fn sticking_dir(&self, rubric_id: &str) -> PathBuf {
        self.root
            .join("rubrics")
            .join(format!("{rubric_id}.sticking_points"))
    }

    pub fn rubric_ids(&self) -> Result<Vec<String>> {
        stems(&self.root.join("rubrics"), "toml")
    }

    /// The rubric as written, without sticking-point guidelines.
    pub fn base_rubric(&self, id: &str) -> Result<Rubric> {
        check_id("rubric", id)?;
        let path = self.root.join("rubrics").join(format!("{id}.toml"));
        if !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "rubric", id: id.into() });
        }
        let rubric = parse_rubric(&read_text(&path)?)?;
        if rubric.id() != id {
            return Err(WorkspaceError::Corrupt {
                path,
                message: format!("file declares rubric id {:?}", rubric.id()),
            });
        }
        Ok(rubric)
    }

    pub fn sticking_points(&self, rubric_id: &str) -> Result<Vec<StickingPoint>> {
        let dir = self.sticking_dir(rubric_id);
        stems(&dir, "json")?
            .into_iter()
            .map(|s| read_json(&dir.join(format!("{s}.json"))))
            .collect()
    }

    /// Rubric with every sticking-point guideline appended.
    pub fn rubric(&self, id: &str) -> Result<Rubric> {
        let base = self.base_rubric(id)?;
        Ok(effective_rubric(&base, &self.sticking_points(id)?))
    }

    pub fn rubrics(&self) -> Result<Vec<Rubric>> {
        self.rubric_ids()?.iter().map(|id| self.rubric(id)).collect()
    }

    pub fn assessment_ids(&self) -> Result<Vec<String>> {
        stems(&self.root.join("assessments"), "toml")
    }

    pub fn assessment(&self, id: &str) -> Result<Assessment> {
        check_id("assessment", id)?;
        let path = self.root.join("assessments").join(format!("{id}.toml"));
        if !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "assessment", id: id.into() });
        }
        let a = Assessment::parse(&read_text(&path)?)?;
        let rubrics: BTreeSet<String> = self.rubric_ids()?.into_iter().collect();
        let assessments: BTreeSet<String> = self.assessment_ids()?.into_iter().collect();
        a.validate(&rubrics, &assessments)?;
        Ok(a)
    }

    pub fn assessments(&self) -> Result<Vec<Assessment>> {
        self.assessment_ids()?.iter().map(|id| self.assessment(id)).collect()
    }

    /// Rubric of `assessment_id`.
    pub fn rubric_for(&self, assessment_id: &str) -> Result<Rubric> {
        let a = self.assessment(assessment_id)?;
        self.rubric(&a.rubric_id)
    }

    // --------------------------------------------------------- responses

    pub fn responses(&self, assessment_id: &str) -> Result<ResponseSet> {
        let rubric = self.rubric_for(assessment_id)?;
        let path = self.responses_path(assessment_id);
        if !path.is_file() {
            return Ok(ResponseSet::default());
        }
        let rubrics = BTreeMap::from([(assessment_id.to_string(), rubric)]);
        let ingested = ingest_str(&read_text(&path)?, InputFormat::Jsonl, &rubrics);
        if let Some(e) = ingested.errors.first() {
            return Err(WorkspaceError::Corrupt {
                path,
                message: e.to_string(),
            });
        }
        Ok(ingested.responses)
    }

    fn responses_path(&self, assessment_id: &str) -> PathBuf {
        self.root.join("responses").join(format!("{assessment_id}.jsonl"))
    }

    /// Adds the rows of a JSONL or CSV file to the stored response sets.
    pub fn ingest(&self, text: &str, format: InputFormat) -> Result<IngestReport> {
        let mut rubrics = BTreeMap::new();
        for a in self.assessments()? {
            let r = self.rubric(&a.rubric_id)?;
            rubrics.insert(a.id, r);
        }
        let ingested = ingest_str(text, format, &rubrics);
        let mut by_assessment: BTreeMap<String, Vec<StudentResponse>> = BTreeMap::new();
        for r in ingested.responses.into_vec() {
            by_assessment.entry(r.assessment_id.clone()).or_default().push(r);
        }
        let mut report = IngestReport {
            added: BTreeMap::new(),
            errors: ingested.errors,
            already_present: Vec::new(),
        };
        for (assessment, new) in by_assessment {
            let mut all = self.responses(&assessment)?.into_vec();
            let known: BTreeSet<String> = all.iter().map(|r| r.id.clone()).collect();
            let mut added = 0;
            for r in new {
                if known.contains(&r.id) {
                    report.already_present.push(r.id);
                } else {
                    all.push(r);
                    added += 1;
                }
            }
            let set = ResponseSet::new(all).expect("ids were deduplicated");
            write_text(&self.responses_path(&assessment), &set.to_jsonl())?;
            report.added.insert(assessment, added);
        }
        Ok(report)
    }

    // ------------------------------------------------------------ splits

    fn split_path(&self, assessment_id: &str) -> PathBuf {
        self.root.join("splits").join(format!("{assessment_id}.json"))
    }

    pub fn stored_split(&self, assessment_id: &str) -> Result<Option<StoredSplit>> {
        let path = self.split_path(assessment_id);
        if path.is_file() {
            Ok(Some(read_json(&path)?))
        } else {
            Ok(None)
        }
    }

    /// Ids that must stay out of test: every IRR-sampled response plus every
    /// stored exemplar's response.
    pub fn withheld_ids(&self, assessment_id: &str) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for s in self.irr_sessions()? {
            if s.assessment_id == assessment_id {
                out.extend(s.sampled_ids());
            }
        }
        for e in self.store()?.all()? {
            if e.response.assessment_id == assessment_id {
                out.insert(e.response.id);
            }
        }
        Ok(out)
    }

    /// Splits the assessment's responses and stores the result.
    pub fn split(&self, assessment_id: &str, test_fraction: f64, seed: u64) -> Result<StoredSplit> {
        let responses = self.responses(assessment_id)?;
        let ids = responses.ids();
        let present: BTreeSet<&String> = ids.iter().collect();
        let withheld = self
            .withheld_ids(assessment_id)?
            .into_iter()
            .filter(|id| present.contains(id))
            .collect();
        let spec = SplitSpec {
            test_fraction,
            seed,
            withheld_from_test: withheld,
        };
        let split = split_dataset(&ids, &spec)?;
        let stored = StoredSplit {
            assessment_id: assessment_id.to_string(),
            spec,
            split,
        };
        write_json(&self.split_path(assessment_id), &stored)?;
        Ok(stored)
    }

    /// Re-splits with the stored parameters if the withheld set has grown.
    fn refresh_split(&self, assessment_id: &str) -> Result<()> {
        if let Some(s) = self.stored_split(assessment_id)? {
            let want = self.withheld_ids(assessment_id)?;
            if !want.is_subset(&s.spec.withheld_from_test) {
                self.split(assessment_id, s.spec.test_fraction, s.spec.seed)?;
            }
        }
        Ok(())
    }

    fn ensure_split(&self, assessment_id: &str) -> Result<StoredSplit> {
        match self.stored_split(assessment_id)? {
            Some(s) => Ok(s),
            None => self.split(assessment_id, 0.2, 0),
        }
    }

    /// Split id and response ids that a config scores on `partition`.
    pub fn partition_ids(
        &self,
        resolved: &ResolvedConfig,
        partition: Partition,
    ) -> Result<(String, Vec<String>)> {
        let split = self.ensure_split(&resolved.config.assessment_id)?;
        let ids = match partition {
            Partition::Train => split.split.train.clone(),
            Partition::Test => split.split.test.clone(),
            Partition::Validation => {
                let used = resolved.exemplar_response_ids();
                split
                    .split
                    .train
                    .iter()
                    .filter(|id| !used.contains(*id))
                    .cloned()
                    .collect()
            }
        };
        Ok((split.split_id(partition), ids))
    }

    // ---------------------------------------------------------- exemplars

    pub fn store(&self) -> Result<ExemplarStore> {
        Ok(ExemplarStore::open(&self.root.join("exemplars"))?)
    }

    // ------------------------------------------------------------ configs

    fn config_dir(&self, name: &str) -> PathBuf {
        self.root.join("configs").join(name)
    }

    pub fn config_names(&self) -> Result<Vec<String>> {
        let dir = self.root.join("configs");
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
            let path = entry.map_err(io(&dir))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if path.is_dir() && name != "snapshots" {
                out.push(name.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn config_versions(&self, name: &str) -> Result<Vec<u32>> {
        let mut v: Vec<u32> = stems(&self.config_dir(name), "toml")?
            .iter()
            .filter_map(|s| s.strip_prefix('v')?.parse().ok())
            .collect();
        v.sort_unstable();
        Ok(v)
    }

    pub fn active_version(&self, name: &str) -> Result<u32> {
        check_id("config", name)?;
        let path = self.config_dir(name).join("active");
        if !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "config", id: name.into() });
        }
        read_text(&path)?
            .trim()
            .parse()
            .map_err(|_| WorkspaceError::Corrupt {
                path,
                message: "active marker is not a version number".into(),
            })
    }

    pub fn config_version(&self, name: &str, version: u32) -> Result<PromptConfig> {
        check_id("config", name)?;
        let path = self.config_dir(name).join(format!("v{version}.toml"));
        if !path.is_file() {
            return Err(WorkspaceError::NotFound {
                kind: "config",
                id: format!("{name}@{version}"),
            });
        }
        Ok(PromptConfig::parse(&read_text(&path)?)?)
    }

    pub fn active_config(&self, name: &str) -> Result<PromptConfig> {
        let v = self.active_version(name)?;
        self.config_version(name, v)
    }

    /// Writes a new config version. Existing versions are never overwritten.
    pub fn save_config(&self, config: &PromptConfig, activate: bool) -> Result<()> {
        check_id("config", &config.name)?;
        config.validate()?;
        let path = self
            .config_dir(&config.name)
            .join(format!("v{}.toml", config.version));
        if path.exists() {
            return Err(WorkspaceError::Conflict(format!(
                "config {}@{} already exists",
                config.name, config.version
            )));
        }
        write_text(&path, &config.to_toml())?;
        if activate {
            self.activate(&config.name, config.version)?;
        }
        Ok(())
    }

    pub fn activate(&self, name: &str, version: u32) -> Result<()> {
        self.config_version(name, version)?;
        write_text(&self.config_dir(name).join("active"), &format!("{version}\n"))
    }

    fn load_config_ref(&self, reference: ConfigRef) -> Result<PromptConfig> {
        Ok(match reference {
            ConfigRef::File(p) => PromptConfig::parse(&read_text(&p)?)?,
            ConfigRef::Version(name, v) => self.config_version(&name, v)?,
            ConfigRef::Active(name) => self.active_config(&name)?,
            ConfigRef::Hash(h) => self.snapshot(&h)?.config,
        })
    }

    /// Resolves a config against the current documents and records the
    /// snapshot under its hash.
    pub fn resolve_config(&self, config: &PromptConfig) -> Result<ResolvedConfig> {
        let resolved = resolve_config(config, self)?;
        let path = self.snapshot_path(&resolved.hash());
        if !path.is_file() {
            write_json(&path, &resolved)?;
        }
        Ok(resolved)
    }

    /// `name`, `name@N`, a prompt hash, or a config file path.
    pub fn resolve(&self, reference: &str) -> Result<ResolvedConfig> {
        match parse_config_ref(reference) {
            ConfigRef::Hash(h) => self.snapshot(&h),
            other => self.resolve_config(&self.load_config_ref(other)?),
        }
    }

    fn snapshot_path(&self, hash: &str) -> PathBuf {
        self.root
            .join("configs")
            .join("snapshots")
            .join(format!("{hash}.json"))
    }

    /// The resolved config a prompt hash was computed from.
    pub fn snapshot(&self, hash: &str) -> Result<ResolvedConfig> {
        let valid = hash.len() == 64 && hash.chars().all(|c| c.is_ascii_hexdigit());
        let path = self.snapshot_path(hash);
        if !valid || !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "config", id: hash.into() });
        }
        read_json(&path)
    }

    pub fn render(&self, reference: &str) -> Result<Prompt> {
        let resolved = self.resolve(reference)?;
        Ok(render_resolved(&resolved, &CharHeuristic)?)
    }

    pub fn configs(&self) -> Result<Vec<ConfigSummary>> {
        let mut out = Vec::new();
        for name in self.config_names()? {
            let active = self.active_version(&name).ok();
            for version in self.config_versions(&name)? {
                let config = self.config_version(&name, version)?;
                let hash = self.resolve_config(&config).ok().map(|r| r.hash());
                out.push(ConfigSummary {
                    name: name.clone(),
                    version,
                    active: active == Some(version),
                    assessment_id: config.assessment_id,
                    rubric_id: config.rubric_id,
                    exemplar_ids: config.exemplar_ids,
                    hash,
                });
            }
        }
        Ok(out)
    }

    // ---------------------------------------------------------- providers

    pub fn provider_ids(&self) -> Result<Vec<String>> {
        stems(&self.root.join("providers"), "toml")
    }

    pub fn provider_config(&self, id: &str) -> Result<ProviderConfig> {
        check_id("provider", id)?;
        let path = self.root.join("providers").join(format!("{id}.toml"));
        if !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "provider", id: id.into() });
        }
        let config: ProviderConfig =
            toml::from_str(&read_text(&path)?).map_err(|e| WorkspaceError::Corrupt {
                path: path.clone(),
                message: e.to_string(),
            })?;
        config.validate().map_err(|message| WorkspaceError::Corrupt { path, message })?;
        Ok(config)
    }

    /// Builds a provider. Mock providers read labels from `responses`.
    pub fn build_provider(
        &self,
        id: &str,
        rubric: &Rubric,
        responses: &ResponseSet,
    ) -> Result<Arc<dyn Provider>> {
        let config = self.provider_config(id)?;
        Ok(match config.kind {
            ProviderKind::Http {
                endpoint,
                model,
                temperature,
                max_output_tokens,
                retry,
                api_key_env,
            } => {
                let transport =
                    ChatTransport::new(&endpoint, &model, temperature, max_output_tokens, api_key_env)?;
                Arc::new(RetryingProvider::new(config.id, transport, retry))
            }
            ProviderKind::EchoLabels => Arc::new(EchoLabels::new(rubric, responses.iter())),
            ProviderKind::Scripted { fixtures } => {
                let path = if fixtures.is_absolute() {
                    fixtures
                } else {
                    self.root.join("providers").join(fixtures)
                };
                let text = read_text(&path)?;
                Arc::new(Scripted::from_json(config.id, &text).map_err(|e| {
                    WorkspaceError::Corrupt {
                        path,
                        message: e.to_string(),
                    }
                })?)
            }
            ProviderKind::Faulty {
                seed,
                fault_rate,
                overscore,
            } => Arc::new(Faulty::new(rubric, responses.iter(), seed, fault_rate, &overscore)),
        })
    }

    // --------------------------------------------------------------- runs

    fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Scores a split, resuming or returning an existing run with the same id.
    pub fn run(&self, request: &RunRequest) -> Result<RunRecord> {
        let resolved = self.resolve(&request.config)?;
        let assessment_id = resolved.config.assessment_id.clone();
        if let Some(a) = &request.assessment {
            if *a != assessment_id {
                return Err(WorkspaceError::Invalid(format!(
                    "config {} scores assessment {assessment_id}, not {a}",
                    resolved.config.name
                )));
            }
        }
        // Fail on the prompt before touching the split or the provider.
        render_resolved(&resolved, &CharHeuristic)?;
        let (split_id, ids) = self.partition_ids(&resolved, request.split)?;
        let responses = self.responses(&assessment_id)?;
        let provider = self.build_provider(&request.provider, &resolved.rubric, &responses)?;
        let runs_dir = self.runs_dir();
        let plan = RunPlan {
            resolved: &resolved,
            split_id,
            response_ids: ids,
            responses: &responses,
            parallelism: request.parallelism.unwrap_or(DEFAULT_PARALLELISM),
            runs_dir: &runs_dir,
        };
        Ok(execute_run(&plan, provider.as_ref())?)
    }

    pub fn run_ids(&self) -> Result<Vec<String>> {
        let dir = self.runs_dir();
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io(&dir)(e)),
        };
        for entry in entries {
            let path = entry.map_err(io(&dir))?.path();
            if path.join("manifest.json").is_file() {
                if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn runs(&self) -> Result<Vec<RunManifest>> {
        let mut out = Vec::new();
        for id in self.run_ids()? {
            let path = self.runs_dir().join(&id).join("manifest.json");
            out.push(read_json(&path)?);
        }
        out.sort_by(|a: &RunManifest, b| {
            a.started_at
                .cmp(&b.started_at)
                .then_with(|| a.run_id.cmp(&b.run_id))
        });
        Ok(out)
    }

    pub fn load_run(&self, run_id: &str) -> Result<RunRecord> {
        check_id("run", run_id)?;
        let dir = self.runs_dir().join(run_id);
        if !dir.join("manifest.json").is_file() {
            return Err(WorkspaceError::NotFound { kind: "run", id: run_id.into() });
        }
        RunRecord::load(&dir).map_err(io(&dir))
    }

    /// The rubric a run was scored against.
    fn run_rubric(&self, run: &RunRecord) -> Result<Rubric> {
        match self.snapshot(&run.manifest.config_hash) {
            Ok(s) => Ok(s.rubric),
            Err(WorkspaceError::NotFound { .. }) => self.rubric(&run.manifest.rubric_id),
            Err(e) => Err(e),
        }
    }

    pub fn metrics(&self, run_id: &str) -> Result<RunMetrics> {
        let run = self.load_run(run_id)?;
        Ok(run_metrics(&run, &self.run_rubric(&run)?)?)
    }

    pub fn trends(&self, run_id: &str, threshold: Option<f64>) -> Result<TrendReport> {
        let run = self.load_run(run_id)?;
        let rubric = self.run_rubric(&run)?;
        Ok(detect_trends(&run, &rubric, threshold.unwrap_or(DEFAULT_TREND_THRESHOLD)))
    }

    pub fn candidates(
        &self,
        run_id: &str,
        threshold: Option<f64>,
        weights: Option<CandidateWeights>,
    ) -> Result<CandidateRanking> {
        let run = self.load_run(run_id)?;
        let rubric = self.run_rubric(&run)?;
        let trends = detect_trends(&run, &rubric, threshold.unwrap_or(DEFAULT_TREND_THRESHOLD));
        Ok(rank_candidates(&run, &rubric, &trends, weights.unwrap_or_default()))
    }

    // ---------------------------------------------------------------- IRR

    fn irr_path(&self, id: &str) -> PathBuf {
        self.root.join("irr").join(format!("{id}.json"))
    }

    pub fn irr_sessions(&self) -> Result<Vec<IrrSession>> {
        let dir = self.root.join("irr");
        stems(&dir, "json")?
            .iter()
            .map(|s| read_json(&dir.join(format!("{s}.json"))))
            .collect()
    }

    pub fn irr_session(&self, id: &str) -> Result<IrrSession> {
        check_id("IRR session", id)?;
        let path = self.irr_path(id);
        if !path.is_file() {
            return Err(WorkspaceError::NotFound { kind: "IRR session", id: id.into() });
        }
        read_json(&path)
    }

    fn save_irr(&self, session: &IrrSession) -> Result<()> {
        write_json(&self.irr_path(&session.id), session)
    }

    /// Samples responses for double scoring. The sample is withheld from
    /// test immediately, re-splitting if a split already exists.
    pub fn open_irr(&self, request: &OpenIrrRequest) -> Result<IrrSession> {
        let assessment = self.assessment(&request.assessment_id)?;
        let rubric = self.rubric(&assessment.rubric_id)?;
        let ids = self.responses(&assessment.id)?.ids();
        let n = self
            .irr_sessions()?
            .iter()
            .filter(|s| s.assessment_id == assessment.id)
            .count();
        let id = format!("irr-{}-{}", assessment.id, n + 1);
        let session = IrrSession::open(
            &id,
            &assessment.id,
            &rubric,
            &ids,
            request.fraction.unwrap_or(crate::hitl::DEFAULT_IRR_FRACTION),
            request.seed,
            request.raters.clone(),
        )?;
        self.save_irr(&session)?;
        self.refresh_split(&assessment.id)?;
        Ok(session)
    }

    /// Records one rater's labels. Kappa is computed as soon as both raters
    /// have scored the whole sample.
    pub fn record_irr_scores(&self, session_id: &str, request: &IrrScoresRequest) -> Result<IrrSession> {
        let mut session = self.irr_session(session_id)?;
        let rubric = self.rubric(&session.rubric_id)?;
        if !session.raters.contains(&request.rater) {
            return Err(IrrError::UnknownRater(request.rater.clone()).into());
        }
        for (response_id, values) in &request.scores {
            let sv = ScoreVector::new(&rubric, values.clone()).map_err(IrrError::from)?;
            session.record_scores(&rubric, &request.rater, response_id, sv)?;
        }
        let round = session.current();
        let complete = session.raters.iter().all(|r| {
            round
                .sampled_ids
                .iter()
                .all(|id| round.scores.get(r).is_some_and(|m| m.contains_key(id)))
        });
        if complete {
            session.compute_kappa(&rubric)?;
        }
        self.save_irr(&session)?;
        Ok(session)
    }

    pub fn resample_irr(&self, session_id: &str) -> Result<IrrSession> {
        let mut session = self.irr_session(session_id)?;
        let ids = self.responses(&session.assessment_id)?.ids();
        session.resample(&ids)?;
        self.save_irr(&session)?;
        self.refresh_split(&session.assessment_id)?;
        Ok(session)
    }

    /// Stores a consensus label, optionally recording a sticking point whose
    /// guideline then appears in every prompt for the rubric.
    pub fn resolve_irr(&self, session_id: &str, request: &ResolutionRequest) -> Result<ResolutionOutcome> {
        let mut session = self.irr_session(session_id)?;
        let rubric = self.rubric(&session.rubric_id)?;
        session.resolve(
            &rubric,
            &request.response_id,
            &request.criterion_id,
            request.consensus,
            request.note.clone(),
        )?;
        let mut sticking_point = None;
        if let Some(draft) = &request.sticking_point {
            let existing = self.sticking_points(&session.rubric_id)?;
            let next = existing
                .iter()
                .filter_map(|p| p.id.strip_prefix("sp-")?.parse::<u32>().ok())
                .max()
                .unwrap_or(0)
                + 1;
            let resolution = if draft.resolution.trim().is_empty() {
                request.note.clone().unwrap_or_default()
            } else {
                draft.resolution.clone()
            };
            let point = StickingPoint {
                id: format!("sp-{next}"),
                rubric_id: session.rubric_id.clone(),
                description: draft.description.clone(),
                affected_criteria: vec![request.criterion_id.clone()],
                resolution,
                guideline: draft.guideline.clone().filter(|g| !g.trim().is_empty()),
                exemplar_id: draft.exemplar_id.clone(),
                source: Some(StickingSource {
                    session_id: session.id.clone(),
                    response_id: request.response_id.clone(),
                }),
            };
            point.validate(&self.base_rubric(&session.rubric_id)?)?;
            if point.resolution.trim().is_empty() {
                return Err(WorkspaceError::Invalid(
                    "a sticking point needs a resolution or a note".into(),
                ));
            }
            write_json(
                &self.sticking_dir(&session.rubric_id).join(format!("{}.json", point.id)),
                &point,
            )?;
            session
                .resolutions
                .last_mut()
                .expect("resolution was just stored")
                .sticking_point_id = Some(point.id.clone());
            sticking_point = Some(point);
        }
        self.save_irr(&session)?;
        let resolution = session.resolutions.last().expect("resolution stored").clone();
        Ok(ResolutionOutcome {
            session,
            resolution,
            sticking_point,
        })
    }

    // ---------------------------------------------------------- promotion

    /// Adds one active-learning exemplar and activates the next config
    /// version. On any error the store and config history are unchanged.
    pub fn promote(&self, request: &PromotionRequest) -> Result<PromotionOutcome> {
        let run = self.load_run(&request.run_id)?;
        let name = run.manifest.config_name.clone();
        let active = self.active_config(&name)?;
        let active_resolved = self.resolve_config(&active)?;
        let active_hash = active_resolved.hash();
        let rubric = &active_resolved.rubric;
        let trends = detect_trends(&run, rubric, DEFAULT_TREND_THRESHOLD);
        let ranking = rank_candidates(&run, rubric, &trends, CandidateWeights::default());
        let responses = self.responses(&run.manifest.assessment_id)?;
        let response = responses
            .get(&request.response_id)
            .ok_or_else(|| WorkspaceError::NotFound {
                kind: "response",
                id: request.response_id.clone(),
            })?;
        let promotion = build_promotion(request, &run, &ranking, &active, &active_hash, rubric, response)?;
        let mut store = self.store()?;
        if store.contains(&promotion.exemplar.id) {
            return Err(PromotionError::AlreadyExemplar(promotion.exemplar.id.clone()).into());
        }

        let overlay = Overlay {
            ws: self,
            extra: &promotion.exemplar,
        };
        let resolved = resolve_config(&promotion.config, &overlay)?;
        let prompt = render_resolved(&resolved, &CharHeuristic)?;

        let config = &promotion.config;
        let path = self.config_dir(&name).join(format!("v{}.toml", config.version));
        if path.exists() {
            return Err(WorkspaceError::Conflict(format!(
                "config {name}@{} already exists",
                config.version
            )));
        }
        write_text(&path, &config.to_toml())?;
        if let Err(e) = store.add(&promotion.exemplar) {
            let _ = std::fs::remove_file(&path);
            return Err(PromotionError::Store(e.to_string()).into());
        }
        self.activate(&name, config.version)?;
        write_json(&self.snapshot_path(&prompt.config_hash), &resolved)?;
        Ok(PromotionOutcome {
            exemplar_id: promotion.exemplar.id.clone(),
            config_name: name,
            previous_version: active.version,
            version: config.version,
            config_hash: prompt.config_hash,
            exemplar_count: config.exemplar_ids.len(),
            estimated_tokens: prompt.estimated_tokens,
        })
    }
}

impl ExemplarSource for Workspace {
    fn exemplar(&self, id: &str) -> Option<Exemplar> {
        self.store().ok()?.get(id).ok()
    }
}

impl PromptSources for Workspace {
    fn rubric(&self, id: &str) -> Option<Rubric> {
        Workspace::rubric(self, id).ok()
    }

    fn assessment(&self, id: &str) -> Option<Assessment> {
        Workspace::assessment(self, id).ok()
    }
}

/// Workspace documents plus one exemplar that is not stored yet.
struct Overlay<'a> {
    ws: &'a Workspace,
    extra: &'a Exemplar,
}

impl ExemplarSource for Overlay<'_> {
    fn exemplar(&self, id: &str) -> Option<Exemplar> {
        if id == self.extra.id {
            Some(self.extra.clone())
        } else {
            self.ws.exemplar(id)
        }
    }
}

impl PromptSources for Overlay<'_> {
    fn rubric(&self, id: &str) -> Option<Rubric> {
        PromptSources::rubric(self.ws, id)
    }

    fn assessment(&self, id: &str) -> Option<Assessment> {
        PromptSources::assessment(self.ws, id)
    }
}

/// Status of an IRR session as a short label.
pub fn irr_status_label(status: IrrStatus) -> &'static str {
    match status {
        IrrStatus::Open => "open",
        IrrStatus::NeedsResample => "needs_resample",
        IrrStatus::Consensus => "consensus",
    }
}
