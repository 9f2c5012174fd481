//! Chat-completion transports: an OpenAI-compatible HTTP client and a
//! scripted mock.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token for [`HttpTransport`].
pub const API_KEY_ENV: &str = "VBPSIM_LLM_API_KEY";
/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "VBPSIM_LLM_ENDPOINT";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed completion payload: {0}")]
    BadResponse(String),
    #[error("no scripted response for firm {firm_id} step {step}")]
    NoScript { firm_id: String, step: usize },
    #[error("transport configuration: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: Box<TransportError> },
}

/// One chat completion request, tagged with the decision it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub firm_id: String,
    pub phase: String,
    pub episode: usize,
    pub step: usize,
    /// 0 for the first try, 1 for the retry after an unparseable answer.
    pub attempt: usize,
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;

    /// Whether requests for different firms may be issued in parallel.
    fn concurrent(&self) -> bool {
        false
    }
}

/// OpenAI-style `POST {endpoint}` chat completions with bearer auth.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    retries: usize,
    backoff: Duration,
}

impl HttpTransport {
    /// Reads the key from [`API_KEY_ENV`]; [`ENDPOINT_ENV`] overrides
    /// `endpoint` when set.
    pub fn from_env(endpoint: &str, timeout: Duration, retries: usize) -> Result<Self, TransportError> {
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| endpoint.to_string());
        if endpoint.is_empty() {
            return Err(TransportError::Config("no chat endpoint configured".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retries,
            backoff: Duration::from_millis(500),
        })
    }

    fn once(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, body: text });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::BadResponse("missing choices[0].message.content".into()))
    }
}

fn retryable(err: &TransportError) -> bool {
    match err {
        TransportError::Network(_) => true,
        TransportError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.once(request) {
                Ok(text) => return Ok(text),
                Err(e) if retryable(&e) && attempt < self.retries => {
                    log::warn!(
                        "chat request for {} step {} failed ({e}); retrying in {:?}",
                        request.firm_id,
                        request.step,
                        delay
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) if attempt > 0 => {
                    return Err(TransportError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn concurrent(&self) -> bool {
        true
    }
}

/// One scripted answer. Unset `episode`, `attempt` and `phase` match any
/// value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedResponse {
    pub firm_id: String,
    pub step: usize,
    #[serde(default)]
    pub episode: Option<usize>,
    #[serde(default)]
    pub attempt: Option<usize>,
    #[serde(default)]
    pub phase: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    /// Answer used when nothing more specific matches.
    #[serde(default)]
    pub default: Option<String>,
    /// Per-firm fallback answers.
    #[serde(default)]
    pub firm_defaults: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub responses: Vec<ScriptedResponse>,
}

/// Deterministic transport replaying a [`MockScript`]. Every request is
/// logged.
#[derive(Debug, Default)]
pub struct MockTransport {
    script: MockScript,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Answers every request with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(MockScript {
            default: Some(text.into()),
            ..MockScript::default()
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }

    fn lookup(&self, r: &ChatRequest) -> Option<&str> {
        let matches = |s: &&ScriptedResponse, exact_attempt: bool| {
            s.firm_id == r.firm_id
                && s.step == r.step
                && s.episode.is_none_or(|e| e == r.episode)
                && s.phase.as_deref().is_none_or(|p| p == r.phase)
                && if exact_attempt {
                    s.attempt == Some(r.attempt)
                } else {
                    s.attempt.is_none()
                }
        };
        let rs = &self.script.responses;
        rs.iter()
            .find(|s| matches(s, true))
            .or_else(|| rs.iter().find(|s| matches(s, false)))
            .map(|s| s.text.as_str())
            .or_else(|| self.script.firm_defaults.get(&r.firm_id).map(String::as_str))
            .or(self.script.default.as_deref())
    }
}

impl ChatTransport for MockTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        if let Ok(mut log) = self.log.lock() {
            log.push(request.clone());
        }
        self.lookup(request)
            .map(str::to_string)
            .ok_or_else(|| TransportError::NoScript {
                firm_id: request.firm_id.clone(),
                step: request.step,
            })
    }

    fn concurrent(&self) -> bool {
        true
    }
}
