//! Client for OpenAI-compatible `/chat/completions` servers (vLLM,
//! llama-server, hosted APIs).

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendSpec, CompletionRequest, CompletionResponse, Usage};

pub struct HttpChatBackend {
    spec: BackendSpec,
    url: String,
    client: reqwest::Client,
}

/// JSON body sent for one completion. Key order is fixed.
pub fn chat_request_body(model: &str, req: &CompletionRequest) -> Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": req.system_prompt},
            {"role": "user", "content": req.user_prompt},
        ],
        "temperature": req.params.effective_temperature(),
        "max_tokens": req.params.max_tokens,
        "seed": req.params.seed,
        "stream": false,
    })
}

fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

impl HttpChatBackend {
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::Config("http-chat requires an endpoint".into()))?;
        let url = completions_url(endpoint);
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { spec, url, client })
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.spec.auth {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(BackendError::Auth(format!(
                    "environment variable `{var}` is not set"
                ))),
            },
        }
    }
}

fn provider_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.trim().to_string())
}

/// Pull the first message's content out of a chat-completion response.
pub(crate) fn parse_chat_response(body: &Value) -> Result<(String, Option<Usage>), BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            BackendError::MalformedResponse("missing choices[0].message.content".into())
        })?;
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok((text.to_string(), usage))
}

#[async_trait]
impl Backend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.spec.id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let key = self.api_key()?;
        let body = chat_request_body(&self.spec.model_name, req);
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = key {
            builder = builder.bearer_auth(key);
        }

        let started = Instant::now();
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(self.spec.timeout_ms)
            } else {
                BackendError::Network(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(self.spec.timeout_ms)
            } else {
                BackendError::Network(e.to_string())
            }
        })?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;

        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(provider_message(&text)));
        }
        if !status.is_success() {
            return Err(BackendError::Provider {
                status: status.as_u16(),
                message: provider_message(&text),
            });
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let (text, usage) = parse_chat_response(&json)?;
        Ok(CompletionResponse {
            text,
            usage,
            latency_ms,
        })
    }
}
