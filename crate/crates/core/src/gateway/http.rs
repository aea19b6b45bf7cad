use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::provider::{CompletionRequest, FinishReason, GatewayError, RawCompletion, Transport, Usage};

/// One POST to an OpenAI-style `/chat/completions` endpoint.
pub struct ChatTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    max_output_tokens: u32,
    api_key_env: Option<String>,
}

impl ChatTransport {
    pub fn new(
        endpoint: &str,
        model: &str,
        temperature: f64,
        max_output_tokens: u32,
        api_key_env: Option<String>,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(ChatTransport {
            client,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            temperature,
            max_output_tokens,
            api_key_env,
        })
    }

    pub fn body(&self, request: &CompletionRequest) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        })
    }
}

fn parse_body(body: &Value) -> Result<RawCompletion, GatewayError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Transport("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let usage = body.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    Ok(RawCompletion {
        text,
        finish_reason,
        usage,
        latency_ms: 0,
    })
}

impl Transport for ChatTransport {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let mut builder = self.client.post(&self.endpoint).json(&self.body(request));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| GatewayError::AuthMissing(var.clone()))?;
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
        }
        let body: Value = response
            .json()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let mut completion = parse_body(&body)?;
        completion.latency_ms = started.elapsed().as_millis() as u64;
        Ok(completion)
    }
}
