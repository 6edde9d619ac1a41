//! Text-generation backends. Every backend returns the model's raw text; no
//! parsing happens at this layer.

mod http;
mod mock;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{chat_request_body, HttpChatBackend};
pub use mock::{mock_backend, MockBackend, MockMatch, MockRule, MockScript};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub decode: Decode,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: DEFAULT_SEED,
            max_tokens: DEFAULT_MAX_TOKENS,
            decode: Decode::Greedy,
        }
    }
}

impl GenerationParams {
    /// Temperature actually sent: greedy decoding always means zero.
    pub fn effective_temperature(&self) -> f64 {
        match self.decode {
            Decode::Greedy => 0.0,
            Decode::Sample => self.temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "http-chat")]
    HttpChat,
    #[serde(rename = "mock")]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub id: String,
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible server, e.g. `http://localhost:8000/v1`.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key. Never the key.
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub gen_params: GenerationParams,
    #[serde(default)]
    pub mock: Option<MockScript>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl BackendSpec {
    pub fn http_chat(id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_name: model.into(),
            auth: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            gen_params: GenerationParams::default(),
            mock: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::HttpChat => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err(BackendError::Config(format!(
                        "backend `{}`: http-chat requires an endpoint",
                        self.id
                    )));
                }
                if self.model_name.is_empty() {
                    return Err(BackendError::Config(format!(
                        "backend `{}`: http-chat requires model_name",
                        self.id
                    )));
                }
            }
            BackendKind::Mock => {
                if self.mock.is_none() {
                    return Err(BackendError::Config(format!(
                        "backend `{}`: mock requires a script",
                        self.id
                    )));
                }
            }
        }
        if self.gen_params.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be positive".into()));
        }
        let t = self.gen_params.temperature;
        if t.is_nan() || t < 0.0 {
            return Err(BackendError::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub params: GenerationParams,
    /// Zero-based attempt number within one decision's repair loop. Not sent
    /// over the wire; lets scripted backends stay a pure function of the request.
    #[serde(default)]
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("provider error (HTTP {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("unscripted request: {0}")]
    Unscripted(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Network(_) | BackendError::Timeout(_) => true,
            BackendError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Network(_) => "network",
            BackendError::Timeout(_) => "timeout",
            BackendError::Auth(_) => "auth",
            BackendError::Provider { .. } => "provider",
            BackendError::MalformedResponse(_) => "malformed_response",
            BackendError::Unscripted(_) => "unscripted",
            BackendError::Config(_) => "configuration",
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// Build a client for `spec`.
pub fn connect(spec: &BackendSpec) -> Result<Arc<dyn Backend>, BackendError> {
    spec.validate()?;
    Ok(match spec.kind {
        BackendKind::HttpChat => Arc::new(HttpChatBackend::new(spec.clone())?),
        BackendKind::Mock => Arc::new(MockBackend::new(spec)?),
    })
}

/// One-shot completion against `spec`.
pub async fn complete(
    spec: &BackendSpec,
    req: &CompletionRequest,
) -> Result<CompletionResponse, BackendError> {
    connect(spec)?.complete(req).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_forces_zero_temperature() {
        let p = GenerationParams {
            temperature: 0.7,
            decode: Decode::Greedy,
            ..Default::default()
        };
        assert_eq!(p.effective_temperature(), 0.0);
        let p = GenerationParams {
            decode: Decode::Sample,
            ..p
        };
        assert_eq!(p.effective_temperature(), 0.7);
    }

    #[test]
    fn spec_validation() {
        let mut s = BackendSpec::http_chat("h", "", "m");
        assert!(matches!(s.validate(), Err(BackendError::Config(_))));
        s.endpoint = Some("http://x".into());
        s.model_name.clear();
        assert!(s.validate().is_err());
        let m = BackendSpec {
            kind: BackendKind::Mock,
            ..BackendSpec::http_chat("m", "http://x", "m")
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn retryability() {
        assert!(BackendError::Timeout(5).is_retryable());
        assert!(BackendError::Provider {
            status: 503,
            message: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Auth("x".into()).is_retryable());
        assert!(!BackendError::Provider {
            status: 400,
            message: String::new()
        }
        .is_retryable());
    }
}
