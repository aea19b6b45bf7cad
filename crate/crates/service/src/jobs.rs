//! Background scoring runs, executed one at a time.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use cotscore_core::workspace::{RunRequest, Workspace};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Job {
    pub id: String,
    pub status: JobStatus,
    pub request: RunRequest,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    /// Set once the run succeeded; fetch it from `GET /runs/{id}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Clone)]
pub(crate) struct JobQueue {
    jobs: Arc<Mutex<BTreeMap<String, Job>>>,
    tx: mpsc::UnboundedSender<String>,
}

impl JobQueue {
    /// Starts the executor task. Must be called inside a tokio runtime.
    pub fn start(ws: Arc<Workspace>) -> JobQueue {
        let (tx, rx) = mpsc::unbounded_channel();
        let queue = JobQueue {
            jobs: Arc::new(Mutex::new(BTreeMap::new())),
            tx,
        };
        tokio::spawn(execute(ws, queue.jobs.clone(), rx));
        queue
    }

    pub fn submit(&self, request: RunRequest) -> Job {
        let job = Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            status: JobStatus::Queued,
            request,
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            run_id: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(job.id.clone(), job.clone());
        if self.tx.send(job.id.clone()).is_err() {
            return self.update(&job.id, |j| {
                j.status = JobStatus::Failed;
                j.error = Some(ApiError::internal("job executor has stopped"));
            });
        }
        job
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    pub fn list(&self) -> Vec<Job> {
        let mut jobs: Vec<Job> = self.jobs.lock().unwrap().values().cloned().collect();
        jobs.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then(a.id.cmp(&b.id)));
        jobs
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) -> Job {
        update(&self.jobs, id, f)
    }
}

fn update(jobs: &Mutex<BTreeMap<String, Job>>, id: &str, f: impl FnOnce(&mut Job)) -> Job {
    let mut table = jobs.lock().unwrap();
    let job = table.get_mut(id).expect("job ids are never removed");
    f(job);
    job.clone()
}

async fn execute(
    ws: Arc<Workspace>,
    jobs: Arc<Mutex<BTreeMap<String, Job>>>,
    mut rx: mpsc::UnboundedReceiver<String>,
) {
    while let Some(id) = rx.recv().await {
        let job = update(&jobs, &id, |j| {
            j.status = JobStatus::Running;
            j.started_at = Some(Utc::now());
        });
        tracing::info!(job = %id, config = %job.request.config, provider = %job.request.provider, "run started");
        let ws = ws.clone();
        let outcome = tokio::task::spawn_blocking(move || ws.run(&job.request)).await;
        let job = update(&jobs, &id, |j| {
            j.finished_at = Some(Utc::now());
            match outcome {
                Ok(Ok(record)) => {
                    j.status = JobStatus::Succeeded;
                    j.run_id = Some(record.manifest.run_id);
                }
                Ok(Err(e)) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e.into());
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(ApiError::internal(format!("run panicked: {e}")));
                }
            }
        });
        tracing::info!(job = %id, status = ?job.status, run = ?job.run_id, "run finished");
    }
}
