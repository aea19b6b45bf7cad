use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Wall-clock time of the successful attempt. Zero for mocks.
    #[serde(default)]
    pub latency_ms: u64,
}

impl RawCompletion {
    pub fn stop(text: impl Into<String>) -> Self {
        RawCompletion {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
            latency_ms: 0,
        }
    }

    pub fn truncated(&self) -> bool {
        self.finish_reason == FinishReason::Length
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct CompletionRequest {
    pub run_id: String,
    pub response_id: String,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "code", content = "detail")]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by provider")]
    RateLimited,
    #[error("credential environment variable {0} is not set")]
    AuthMissing(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: Box<GatewayError> },
    #[error("mock provider: {0}")]
    Mock(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::RateLimited)
    }
}

/// Anything that turns a request into a completion.
pub trait Provider: Send + Sync {
    /// Stable identifier that goes into run ids.
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        (**self).complete(request)
    }
}

/// A single network attempt, retried by [`RetryingProvider`].
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    #[serde(default = "two")]
    pub multiplier: f64,
    #[serde(default = "thirty_seconds")]
    pub max_backoff_ms: u64,
}

fn two() -> f64 {
    2.0
}

fn thirty_seconds() -> u64 {
    30_000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 1_000,
            multiplier: 2.0,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Success,
    RateLimited,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct AttemptLog {
    pub run_id: String,
    pub response_id: String,
    pub attempt: u32,
    pub outcome: AttemptOutcome,
    /// Sleep taken after this attempt, if another one followed.
    pub backoff_ms: Option<u64>,
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Retries transient transport failures with exponential backoff and keeps
/// a log of every attempt.
pub struct RetryingProvider<T> {
    id: String,
    transport: T,
    policy: RetryPolicy,
    sleeper: Sleeper,
    log: Mutex<Vec<AttemptLog>>,
}

impl<T: Transport> RetryingProvider<T> {
    pub fn new(id: impl Into<String>, transport: T, policy: RetryPolicy) -> Self {
        RetryingProvider {
            id: id.into(),
            transport,
            policy,
            sleeper: Arc::new(std::thread::sleep),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn attempts(&self) -> Vec<AttemptLog> {
        self.log.lock().expect("attempt log poisoned").clone()
    }

    fn record(&self, entry: AttemptLog) {
        tracing::info!(
            run_id = %entry.run_id,
            response_id = %entry.response_id,
            attempt = entry.attempt,
            outcome = ?entry.outcome,
            backoff_ms = ?entry.backoff_ms,
            "completion attempt"
        );
        self.log.lock().expect("attempt log poisoned").push(entry);
    }
}

impl<T: Transport> Provider for RetryingProvider<T> {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let max = self.policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = self.transport.send(request);
            let outcome = match &result {
                Ok(_) => AttemptOutcome::Success,
                Err(GatewayError::RateLimited) => AttemptOutcome::RateLimited,
                Err(e) => AttemptOutcome::Failed(e.to_string()),
            };
            let again = matches!(&result, Err(e) if e.retryable()) && attempt < max;
            let backoff = again.then(|| self.policy.backoff(attempt));
            self.record(AttemptLog {
                run_id: request.run_id.clone(),
                response_id: request.response_id.clone(),
                attempt,
                outcome,
                backoff_ms: backoff.map(|d| d.as_millis() as u64),
            });
            match result {
                Ok(c) => return Ok(c),
                Err(e) if !e.retryable() => return Err(e),
                Err(e) => match backoff {
                    Some(d) => (self.sleeper)(d),
                    None => {
                        return Err(GatewayError::ExhaustedRetries {
                            attempts: attempt,
                            last: Box::new(e),
                        })
                    }
                },
            }
        }
    }
}

fn zero() -> f64 {
    0.0
}

fn default_max_output() -> u32 {
    2048
}

/// How a named provider is built. Stored as `providers/<id>.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProviderConfig {
    pub id: String,
    #[serde(flatten)]
    pub kind: ProviderKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-style chat-completion endpoint.
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "zero")]
        temperature: f64,
        #[serde(default = "default_max_output")]
        max_output_tokens: u32,
        #[serde(default)]
        retry: RetryPolicy,
        /// Environment variable holding the bearer token, if the endpoint needs one.
        #[serde(default)]
        api_key_env: Option<String>,
    },
    /// Reproduces each response's human labels.
    EchoLabels,
    /// Returns fixture completions keyed by response id.
    Scripted { fixtures: PathBuf },
    /// Human labels with seeded faults and systematic over-scoring.
    Faulty {
        seed: u64,
        #[serde(default)]
        fault_rate: f64,
        #[serde(default)]
        overscore: Vec<String>,
    },
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("provider id is empty".into());
        }
        match &self.kind {
            ProviderKind::Http {
                temperature, retry, ..
            } => {
                if temperature.is_nan() || *temperature < 0.0 {
                    return Err("temperature must be >= 0".into());
                }
                if retry.max_attempts < 1 {
                    return Err("retry.max_attempts must be >= 1".into());
                }
            }
            ProviderKind::Faulty { fault_rate, .. } if !(0.0..=1.0).contains(fault_rate) => {
                return Err("fault_rate must lie in [0, 1]".into());
            }
            _ => {}
        }
        Ok(())
    }
}
